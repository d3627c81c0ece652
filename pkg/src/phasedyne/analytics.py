"""Closed-form mean-square-error laws, unit conversions, and the reference
scaling table for phase estimation.

All tracking-error formulas are stationary MSEs of the estimated phase, as
functions of N (mean photon number per coherence time), the feedback gain
chi, and the squeezing spectral power S.  The reference table collects the
asymptotic scaling laws for the four detection/source/adaptivity squares in
both continuous-wave and single-shot operation, including entries whose
constant or very existence is still open.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from .errors import ConfigError, ModerateSqueezingWarning

#: Reduced Planck constant, CODATA 2018 exact value (J*s).  Only the
#: physical-units conversions use it; dimensionless mode bypasses it.
HBAR = 1.054571817e-34

#: Squeezing validity margin: below MODERATE_SQUEEZING_MARGIN * N^(-1/3) the
#: neglected amplitude-quadrature noise is no longer small.
MODERATE_SQUEEZING_MARGIN = 5.0


def mse_adaptive_coherent(n_photons: float) -> float:
    """Stationary MSE of adaptive tracking with coherent light: 1/(2*sqrt(N))."""
    if not n_photons > 0:
        raise ConfigError(f"N must be > 0, got {n_photons}")
    return 1.0 / (2.0 * math.sqrt(n_photons))


def mse_heterodyne(n_photons: float) -> float:
    """Stationary MSE of swept-LO (heterodyne) tracking: 1/sqrt(2N)."""
    if not n_photons > 0:
        raise ConfigError(f"N must be > 0, got {n_photons}")
    return 1.0 / math.sqrt(2.0 * n_photons)


def mse_vs_gain(chi: float, kappa: float, alpha: float) -> float:
    """Stationary MSE of the fixed-gain loop: chi/(8*alpha^2) + kappa/(2*chi).

    Minimized at chi = 2*alpha*sqrt(kappa), where it equals
    mse_adaptive_coherent(alpha^2/kappa).
    """
    if not chi > 0:
        raise ConfigError(f"chi must be > 0, got {chi}")
    return chi / (8.0 * alpha**2) + kappa / (2.0 * chi)


def gain_mismatch_threshold() -> float:
    """Gain mismatch ratio at which adaptive tracking loses to heterodyne.

    Exact solution of (r + 1/r)/2 = sqrt(2): r = 1 + sqrt(2) ~ 2.414,
    symmetric under r -> 1/r.
    """
    return 1.0 + math.sqrt(2.0)


def mse_adaptive_squeezed(S: float, n_photons: float) -> float:
    """Stationary MSE with moderate phase-quadrature squeezing: sqrt(S)/(2*sqrt(N)).

    Valid for the gain choice chi = kappa/sigma^2.  Warns when S is within
    MODERATE_SQUEEZING_MARGIN of N^(-1/3), where the neglected
    amplitude-quadrature noise becomes comparable and the formula is no
    longer trustworthy.
    """
    if not n_photons > 0:
        raise ConfigError(f"N must be > 0, got {n_photons}")
    if not 0 < S <= 1:
        raise ConfigError(f"S must be in (0, 1], got {S}")
    threshold = MODERATE_SQUEEZING_MARGIN * n_photons ** (-1.0 / 3.0)
    if S < 1 and S < threshold * (1.0 - 1e-12):
        warnings.warn(
            f"S = {S:.4g} is below the moderate-squeezing regime "
            f"(< {MODERATE_SQUEEZING_MARGIN}*N^(-1/3)); the closed form "
            "neglects amplitude noise that is no longer small",
            ModerateSqueezingWarning,
            stacklevel=2,
        )
    return math.sqrt(S) / (2.0 * math.sqrt(n_photons))


def photons_per_coherence_time(power: float, omega: float, kappa: float) -> float:
    """N = P / (hbar * omega * kappa) for beam power P and frequency omega."""
    if not (power > 0 and omega > 0 and kappa > 0):
        raise ConfigError("power, omega, kappa must all be > 0")
    return power / (HBAR * omega * kappa)


# ---------------------------------------------------------------------------
# Reference scaling table
# ---------------------------------------------------------------------------


class Mode(str, Enum):
    CW = "cw"
    SINGLE_SHOT = "single-shot"


class Detection(str, Enum):
    DYNE = "dyne"
    INTERFEROMETRIC = "interferometric"


class Source(str, Enum):
    COHERENT = "coherent"
    NONCLASSICAL = "nonclassical"


class Adaptivity(str, Enum):
    ADAPTIVE = "adaptive"
    NONADAPTIVE = "nonadaptive"


@dataclass(frozen=True)
class ScalingEntry:
    """One cell of the reference table: MSE ~ constant * var^(-exponent).

    constant None means only the scaling is known ("~" entries); known False
    means the whole law is an open question ("?" entries).  log_factor marks
    laws with a log(var) numerator; conjectured marks scalings the sources
    only conjecture.
    """

    mode: Mode
    detection: Detection
    source: Source
    adaptivity: Adaptivity
    known: bool
    variable: str = "N"
    constant: float | None = None
    exponent: Fraction | None = None
    log_factor: bool = False
    conjectured: bool = False
    beats_sql: bool = False

    def law_text(self) -> str:
        """Human/CSV rendering, e.g. '0.5/N^0.5' or '~log(nbar)/nbar^2'."""
        if not self.known:
            return "?"
        num = f"log({self.variable})" if self.log_factor else _format_number(self.constant)
        prefix = "~" if (self.constant is None or self.log_factor) else ""
        if self.conjectured:
            prefix = "?" + prefix
        if self.constant is None and not self.log_factor:
            num = "1"
        exp = _format_exponent(self.exponent)
        den = self.variable if exp == "1" else f"{self.variable}^{exp}"
        return f"{prefix}{num}/{den}"


def _format_number(x: float | None) -> str:
    if x is None:
        return "1"
    return f"{x:g}"


def _format_exponent(e: Fraction) -> str:
    if e.denominator == 1:
        return str(e.numerator)
    if e.denominator == 2:
        return f"{float(e):g}"
    return f"({e.numerator}/{e.denominator})"


def _entry(mode, det, src, adp, **kw) -> ScalingEntry:
    return ScalingEntry(mode=mode, detection=det, source=src, adaptivity=adp, **kw)


_HALF = Fraction(1, 2)
_TWO_THIRDS = Fraction(2, 3)

_SCALING_TABLE: dict[tuple, ScalingEntry] = {}


def _register(entry: ScalingEntry):
    _SCALING_TABLE[(entry.mode, entry.detection, entry.source, entry.adaptivity)] = entry


# Continuous wave, dyne detection.
_register(_entry(Mode.CW, Detection.DYNE, Source.COHERENT, Adaptivity.ADAPTIVE,
                 known=True, constant=0.5, exponent=_HALF))
_register(_entry(Mode.CW, Detection.DYNE, Source.COHERENT, Adaptivity.NONADAPTIVE,
                 known=True, constant=0.71, exponent=_HALF))
_register(_entry(Mode.CW, Detection.DYNE, Source.NONCLASSICAL, Adaptivity.ADAPTIVE,
                 known=True, constant=None, exponent=_TWO_THIRDS, beats_sql=True))
_register(_entry(Mode.CW, Detection.DYNE, Source.NONCLASSICAL, Adaptivity.NONADAPTIVE,
                 known=True, constant=0.66, exponent=_HALF))

# Continuous wave, interferometric detection.
_register(_entry(Mode.CW, Detection.INTERFEROMETRIC, Source.COHERENT, Adaptivity.ADAPTIVE,
                 known=True, constant=1.0, exponent=_HALF))
_register(_entry(Mode.CW, Detection.INTERFEROMETRIC, Source.COHERENT, Adaptivity.NONADAPTIVE,
                 known=True, constant=1.0, exponent=_HALF))
_register(_entry(Mode.CW, Detection.INTERFEROMETRIC, Source.NONCLASSICAL, Adaptivity.ADAPTIVE,
                 known=False))
_register(_entry(Mode.CW, Detection.INTERFEROMETRIC, Source.NONCLASSICAL, Adaptivity.NONADAPTIVE,
                 known=False))

# Single shot, dyne detection (mean photon number nbar).
_register(_entry(Mode.SINGLE_SHOT, Detection.DYNE, Source.COHERENT, Adaptivity.ADAPTIVE,
                 known=True, variable="nbar", constant=0.25, exponent=Fraction(1)))
_register(_entry(Mode.SINGLE_SHOT, Detection.DYNE, Source.COHERENT, Adaptivity.NONADAPTIVE,
                 known=True, variable="nbar", constant=0.5, exponent=Fraction(1)))
_register(_entry(Mode.SINGLE_SHOT, Detection.DYNE, Source.NONCLASSICAL, Adaptivity.ADAPTIVE,
                 known=True, variable="nbar", exponent=Fraction(2), log_factor=True,
                 beats_sql=True))
_register(_entry(Mode.SINGLE_SHOT, Detection.DYNE, Source.NONCLASSICAL, Adaptivity.NONADAPTIVE,
                 known=True, variable="nbar", constant=0.25, exponent=Fraction(1)))

# Single shot, interferometric detection (photon number n).
_register(_entry(Mode.SINGLE_SHOT, Detection.INTERFEROMETRIC, Source.COHERENT,
                 Adaptivity.ADAPTIVE, known=True, variable="n", constant=1.0,
                 exponent=Fraction(1)))
_register(_entry(Mode.SINGLE_SHOT, Detection.INTERFEROMETRIC, Source.COHERENT,
                 Adaptivity.NONADAPTIVE, known=True, variable="n", constant=1.0,
                 exponent=Fraction(1)))
_register(_entry(Mode.SINGLE_SHOT, Detection.INTERFEROMETRIC, Source.NONCLASSICAL,
                 Adaptivity.ADAPTIVE, known=True, variable="n", exponent=Fraction(2),
                 log_factor=True, conjectured=True, beats_sql=True))
_register(_entry(Mode.SINGLE_SHOT, Detection.INTERFEROMETRIC, Source.NONCLASSICAL,
                 Adaptivity.NONADAPTIVE, known=True, variable="n", constant=None,
                 exponent=Fraction(1)))


def sql_table(mode: Mode, detection: Detection, source: Source,
              adaptivity: Adaptivity) -> ScalingEntry:
    """Look up one reference-table entry; open entries come back known=False."""
    try:
        key = (Mode(mode), Detection(detection), Source(source), Adaptivity(adaptivity))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return _SCALING_TABLE[key]


def scaling_table_rows() -> list[list[str]]:
    """Table cells in the reference row/column layout.

    Rows: (CW, single-shot) x (adaptive, nonadaptive); columns: (dyne,
    interferometric) x (coherent, nonclassical).  Entries that beat the
    standard quantum limit carry a trailing '*'.
    """
    header = ["mode", "adaptivity",
              "dyne coherent", "dyne nonclassical",
              "interferometric coherent", "interferometric nonclassical"]
    rows = [header]
    for mode in (Mode.CW, Mode.SINGLE_SHOT):
        for adp in (Adaptivity.ADAPTIVE, Adaptivity.NONADAPTIVE):
            cells = [mode.value, adp.value]
            for det in (Detection.DYNE, Detection.INTERFEROMETRIC):
                for src in (Source.COHERENT, Source.NONCLASSICAL):
                    e = sql_table(mode, det, src, adp)
                    cells.append(e.law_text() + (" *" if e.beats_sql else ""))
            rows.append(cells)
    return rows


def scaling_table_csv() -> str:
    """CSV export of the reference table ('*' marks sub-SQL entries)."""
    buf = io.StringIO()
    buf.write("# asymptotic mean-square-error scaling laws; * = beats the standard quantum limit\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(scaling_table_rows())
    return buf.getvalue()
