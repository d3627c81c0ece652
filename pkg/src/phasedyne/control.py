"""Local-oscillator phase controllers.

Three ways to steer the LO phase Phi(t):

* heterodyne: sweep Phi linearly at a detuning far above every loop rate,
* fixed gain: the classic phase-lock law  dPhi = chi * I dt / (2*alpha),
* time-varying gain: propagate the tracking variance sigma^2(t) through its
  Riccati equation and feed back with the matched gain 2*alpha*sigma^2(t).

The fixed-gain loop has a finite optimal gain, chi_opt = 2*alpha*sqrt(kappa):
the quantum noise floor makes harder feedback counterproductive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .analytics import HBAR
from .errors import ConfigError, StiffnessError

#: Default ratio of the heterodyne detuning to the optimal loop gain.  Large
#: enough that demodulation sidebands sit below the percent level.
DEFAULT_DETUNING_FACTOR = 50.0

#: Additional step guard for the swept LO: the phase advance per step.
DETUNING_STEP_GUARD = 0.05

#: Hard cap on the LO phase update in a single step; beyond this the loop is
#: not integrating the continuous dynamics any more.
MAX_LO_STEP = math.pi / 4


class ControllerKind(str, Enum):
    HETERODYNE = "heterodyne"
    FIXED_GAIN = "fixed-gain"
    KALMAN_GAIN = "kalman-gain"


@dataclass(frozen=True)
class ControllerSpec:
    """Which controller to run, and its free parameters.

    Heterodyne uses detuning_factor (Delta = detuning_factor * chi_opt) and
    demod_rate (the demodulator decay; default alpha*sqrt(2*kappa)).
    Fixed gain uses chi.  The time-varying controller starts its variance
    integration from sigma2_init (default: the stationary variance).
    """

    kind: ControllerKind
    chi: float | None = None
    sigma2_init: float | None = None
    detuning_factor: float = DEFAULT_DETUNING_FACTOR
    demod_rate: float | None = None
    Phi0: float = 0.0

    def __post_init__(self):
        if self.kind == ControllerKind.FIXED_GAIN:
            if self.chi is None or not self.chi > 0:
                raise ConfigError(f"fixed-gain controller needs chi > 0, got {self.chi}")
        if self.kind == ControllerKind.KALMAN_GAIN:
            if self.sigma2_init is not None and not self.sigma2_init > 0:
                raise ConfigError(f"sigma2_init must be > 0, got {self.sigma2_init}")
        if self.kind == ControllerKind.HETERODYNE:
            if not self.detuning_factor >= 10:
                raise ConfigError(
                    f"detuning_factor must be >= 10 to keep the sweep far above "
                    f"the loop rates, got {self.detuning_factor}"
                )
            if self.demod_rate is not None and not self.demod_rate > 0:
                raise ConfigError(f"demod_rate must be > 0, got {self.demod_rate}")

    @classmethod
    def heterodyne(cls, detuning_factor: float = DEFAULT_DETUNING_FACTOR,
                   demod_rate: float | None = None, Phi0: float = 0.0) -> "ControllerSpec":
        return cls(kind=ControllerKind.HETERODYNE, detuning_factor=detuning_factor,
                   demod_rate=demod_rate, Phi0=Phi0)

    @classmethod
    def fixed_gain(cls, chi: float, Phi0: float = math.pi / 2) -> "ControllerSpec":
        return cls(kind=ControllerKind.FIXED_GAIN, chi=chi, Phi0=Phi0)

    @classmethod
    def kalman_gain(cls, sigma2_init: float | None = None,
                    Phi0: float = math.pi / 2) -> "ControllerSpec":
        return cls(kind=ControllerKind.KALMAN_GAIN, sigma2_init=sigma2_init, Phi0=Phi0)


def heterodyne_lo_phase(t: float, Delta: float, Phi0: float) -> float:
    """Swept LO phase: Phi0 + Delta*t."""
    return Phi0 + Delta * t


def adaptive_lo_step(Phi: float, I_dt: float, chi: float, alpha: float) -> float:
    """Fixed-gain LO update: Phi + chi*I_dt/(2*alpha), unwrapped."""
    if not chi > 0:
        raise ConfigError(f"chi must be > 0, got {chi}")
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    return Phi + chi * I_dt / (2.0 * alpha)


def optimal_gain(kappa: float, alpha: float) -> float:
    """Gain minimizing the stationary MSE: chi_opt = 2*alpha*sqrt(kappa)."""
    if not (kappa > 0 and alpha > 0):
        raise ConfigError("kappa and alpha must be > 0")
    return 2.0 * alpha * math.sqrt(kappa)


def optimal_gain_physical(kappa: float, power: float, omega: float) -> float:
    """Optimal gain from lab quantities: 2*sqrt(kappa*P/(hbar*omega))."""
    if not (kappa > 0 and power > 0 and omega > 0):
        raise ConfigError("kappa, power, omega must all be > 0")
    return 2.0 * math.sqrt(kappa * power / (HBAR * omega))


def riccati_step(sigma2: float, kappa: float, alpha: float, dt: float) -> float:
    """Euler step of the tracking-variance equation d(s2)/dt = kappa - 4*alpha^2*s2^2.

    Fixed point at sigma2 = sqrt(kappa)/(2*alpha), i.e. 1/(2*sqrt(N)) in
    kappa = 1 units.  A non-positive result means the step size violates
    the transient rate 4*alpha^2*sigma2 and is reported, not returned.
    """
    if not sigma2 > 0:
        raise ConfigError(f"sigma2 must be > 0, got {sigma2}")
    out = sigma2 + (kappa - 4.0 * alpha**2 * sigma2**2) * dt
    if not out > 0:
        raise StiffnessError(
            f"variance step drove sigma2 to {out:.3g}; reduce dt below "
            f"~1/(4*alpha^2*sigma2) = {1.0 / (4 * alpha**2 * sigma2):.3g}"
        )
    return out


def kalman_gain(sigma2: float, alpha: float) -> float:
    """Instantaneous feedback gain 2*alpha*sigma2 of the variance-matched loop.

    The LO update is Phi += kalman_gain(sigma2, alpha) * I_dt; at the
    stationary variance this coincides with the fixed-gain law at chi_opt.
    """
    if sigma2 < 0:
        raise ConfigError(f"sigma2 must be >= 0, got {sigma2}")
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    return 2.0 * alpha * sigma2


def stationary_variance(kappa: float, alpha: float) -> float:
    """Fixed point of the variance equation: sqrt(kappa)/(2*alpha)."""
    return math.sqrt(kappa) / (2.0 * alpha)
