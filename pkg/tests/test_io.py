import math

import pytest

from phasedyne.errors import ConfigError
from phasedyne.harness import SweepKind, SweepRow, SweepSpec, SweepResult
from phasedyne.io import (
    check_same_manifest,
    embedded_manifest,
    format_value,
    read_csv,
    render_csv,
    sweep_table,
    write_csv,
    write_json,
)


class TestFormatting:
    def test_floats_round_trip(self):
        for x in (0.1, 1 / 3, 2.5e-17, math.pi, 7.798e5, -0.0):
            assert float(format_value(x)) == x

    def test_seventeen_significant_digits(self):
        assert format_value(1 / 3) == "0.33333333333333331"

    def test_non_floats(self):
        assert format_value(3) == "3"
        assert format_value("x") == "x"
        assert format_value(None) == ""
        assert format_value(True) == "true"
        assert format_value(math.nan) == "nan"


class TestCsvRoundTrip:
    def test_render_and_read(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["a", "b"], [[1.5, "x"], [2.5e-8, "y"]], "beef")
        manifest, header, rows = read_csv(path)
        assert manifest == "beef"
        assert header == ["a", "b"]
        assert float(rows[0][0]) == 1.5
        assert rows[1][1] == "y"

    def test_no_manifest(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["a"], [[1]])
        manifest, _, _ = read_csv(path)
        assert manifest is None

    def test_deterministic_bytes(self):
        a = render_csv(["a"], [[0.1], [2.0]], "h")
        b = render_csv(["a"], [[0.1], [2.0]], "h")
        assert a == b


class TestManifestChecks:
    def test_same_hash_accepted(self, tmp_path):
        p1 = write_csv(tmp_path / "a.csv", ["x"], [[1]], "aa")
        p2 = write_json(tmp_path / "b.json", {"k": 1}, "aa")
        assert check_same_manifest(p1, p2) == "aa"

    def test_mismatch_rejected(self, tmp_path):
        p1 = write_csv(tmp_path / "a.csv", ["x"], [[1]], "aa")
        p2 = write_json(tmp_path / "b.json", {"k": 1}, "bb")
        with pytest.raises(ConfigError, match="different runs"):
            check_same_manifest(p1, p2)

    def test_missing_everywhere_rejected(self, tmp_path):
        p1 = write_csv(tmp_path / "a.csv", ["x"], [[1]])
        with pytest.raises(ConfigError, match="no manifest"):
            check_same_manifest(p1)

    def test_embedded_lookup(self, tmp_path):
        p = write_json(tmp_path / "b.json", {"k": 1}, "cc")
        assert embedded_manifest(p) == "cc"


class TestSweepTable:
    def test_columns(self):
        spec = SweepSpec(kind=SweepKind.GAIN, grid=(1.0,), n_photons=100.0)
        row = SweepRow(params={"chi_ratio": 1.0, "n_photons": 100.0}, seed=5,
                       mse=0.05, stderr=0.001, n_samples=10, slip_count=0,
                       analytic=0.05, ratio=1.0)
        header, rows = sweep_table(SweepResult(spec=spec, rows=[row]))
        assert header[:2] == ["chi_ratio", "n_photons"]
        assert header[2:] == ["mse", "stderr", "n_samples", "slip_count",
                              "analytic_prediction", "ratio", "seed", "error"]
        assert rows[0][2] == 0.05
