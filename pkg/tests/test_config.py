import json
import math

import pytest

from phasedyne.config import (
    RunManifest,
    build_manifest,
    build_noise,
    build_simulate_setup,
    build_sweep_spec,
    parse_config_text,
    resolve_config,
)
from phasedyne.errors import ConfigError


class TestParseConfigText:
    def test_key_value_lines(self):
        text = """
        # an experiment
        experiment = het-vs-adaptive
        N = 400        # photons per coherence time
        seed = 7
        """
        values = parse_config_text(text)
        assert values == {"experiment": "het-vs-adaptive", "N": "400", "seed": "7"}

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("N = 1\nN = 2\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("just some words\n")

    def test_manifest_json_accepted(self):
        doc = {"config": {"N": 400.0, "seed": 9, "experiment": "gain"},
               "hash": "abc"}
        values = parse_config_text(json.dumps(doc))
        assert values["N"] == "400.0"
        assert values["seed"] == "9"


class TestResolveConfig:
    def test_minimal_defaults_materialized(self):
        resolved, prov = resolve_config({"experiment": "het-vs-adaptive", "N": "400"})
        assert resolved["kappa"] == 1.0
        assert resolved["n_traj"] == 200
        assert resolved["grid"] == (100.0, 400.0, 1600.0)
        assert prov["experiment"] == "file"
        assert prov["kappa"] == "default"

    def test_negative_photon_number_rejected(self):
        with pytest.raises(ConfigError, match="N = '-5' violates the constraint N > 0"):
            resolve_config({"N": "-5"})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration key 'Nphotons'"):
            resolve_config({"Nphotons": "100"})

    def test_flag_wins_with_provenance(self):
        resolved, prov = resolve_config({"N": "400"}, {"N": 1600.0})
        assert resolved["N"] == 1600.0
        assert prov["N"] == "flag"

    def test_type_error_names_key(self):
        with pytest.raises(ConfigError, match="n_traj"):
            resolve_config({"n_traj": "many"})

    def test_seed_range(self):
        with pytest.raises(ConfigError, match="seed"):
            resolve_config({"seed": str(2**64)})

    def test_squeeze_grid_domain(self):
        with pytest.raises(ConfigError, match="squeeze"):
            resolve_config({"experiment": "squeeze", "grid": "0.5,2.0"})


class TestManifest:
    def test_hash_ignores_timestamp(self):
        resolved, prov = resolve_config({"N": "400"})
        a = build_manifest("simulate", resolved, prov)
        b = build_manifest("simulate", resolved, prov)
        assert a.timestamp != b.timestamp or True
        assert a.hash == b.hash

    def test_hash_tracks_config(self):
        r1, p1 = resolve_config({"N": "400"})
        r2, p2 = resolve_config({"N": "1600"})
        assert build_manifest("simulate", r1, p1).hash != \
            build_manifest("simulate", r2, p2).hash

    def test_override_carries_through(self):
        m = RunManifest("simulate", {}, {}, 0, hash_override="cafe")
        assert m.hash == "cafe"
        assert m.payload()["hash"] == "cafe"

    def test_manifest_round_trips_as_config(self):
        resolved, prov = resolve_config({"N": "400", "seed": "9"})
        manifest = build_manifest("simulate", resolved, prov)
        values = parse_config_text(json.dumps(manifest.payload()))
        resolved2, _ = resolve_config(values)
        assert resolved2["N"] == resolved["N"]
        assert resolved2["seed"] == resolved["seed"]
        assert build_manifest("simulate", resolved2, prov).hash == manifest.hash


class TestBuilders:
    def test_simulate_setup_derives_guarded_dt(self):
        resolved, _ = resolve_config({"N": "400"})
        config, controller, noise = build_simulate_setup(resolved)
        assert config.dt * 40.0 <= 0.02 + 1e-12
        assert controller.chi == pytest.approx(40.0)
        assert noise.kind.value == "coherent"

    def test_explicit_dt_override(self):
        resolved, _ = resolve_config({"N": "400", "dt": "1e-5"})
        config, _, _ = build_simulate_setup(resolved)
        assert config.dt == pytest.approx(1e-5)

    def test_squeezed_needs_s(self):
        with pytest.raises(ConfigError, match="requires S"):
            build_noise({"noise": "squeezed", "S": None, "S_a": None})

    def test_s_meaningless_for_coherent(self):
        with pytest.raises(ConfigError, match="squeezed"):
            build_noise({"noise": "coherent", "S": 0.5, "S_a": None})

    def test_squeezed_gain_prescription(self):
        resolved, _ = resolve_config({"N": "400", "noise": "squeezed", "S": "0.25"})
        _, controller, _ = build_simulate_setup(resolved)
        assert controller.chi == pytest.approx(40.0 / math.sqrt(0.25))

    def test_heterodyne_controller(self):
        resolved, _ = resolve_config({"N": "400", "controller": "heterodyne"})
        config, controller, _ = build_simulate_setup(resolved)
        assert controller.kind.value == "heterodyne"
        assert config.dt * 50 * 40 <= 0.05 + 1e-12

    def test_sweep_spec_mapping(self):
        resolved, _ = resolve_config({"experiment": "gain", "N": "100",
                                      "grid": "0.5,1,2"})
        spec = build_sweep_spec(resolved)
        assert spec.kind.value == "gain"
        assert spec.grid == (0.5, 1.0, 2.0)
        assert spec.n_photons == 100.0

    def test_sweep_spec_rejects_simulate(self):
        resolved, _ = resolve_config({"experiment": "simulate"})
        with pytest.raises(ConfigError):
            build_sweep_spec(resolved)

    def test_squeezed_noise_implies_fixed_rule(self):
        resolved, _ = resolve_config({"experiment": "n", "noise": "squeezed",
                                      "S": "0.5", "grid": "100,400"})
        spec = build_sweep_spec(resolved)
        assert spec.squeeze_rule.value == "fixed"
