"""Phase estimators.

Adaptive loops carry their estimate in the LO phase itself (the LO is held
a quarter turn ahead, so phi_hat = Phi - pi/2).  The swept-LO scheme needs
an explicit demodulator: an exponentially weighted complex accumulator
whose argument tracks the signal phase.  The discrete-time filter below is
the inverse-variance bookkeeping that underlies the variance-matched
controller: a windowed immediate estimate is merged with the diffusion-
inflated previous one, and its variance recursion is the discrete form of
the continuous Riccati equation.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .errors import ConfigError, NoSignalError


def adaptive_estimate(Phi: float) -> float:
    """Estimate implied by the quarter-turn LO convention: Phi - pi/2."""
    return Phi - math.pi / 2


def immediate_variance(alpha: float, delta_t: float) -> float:
    """Variance of the single-window estimate: 1/(4*alpha^2*delta_t).

    Diverges as delta_t -> 0; the immediate estimate alone is useless and
    must be merged with the running estimate.
    """
    if not (alpha > 0 and delta_t > 0):
        raise ConfigError("alpha and delta_t must be > 0")
    return 1.0 / (4.0 * alpha**2 * delta_t)


def inflate_variance(sigma2: float, kappa: float, delta_t: float) -> float:
    """Diffusion inflation of a stale estimate's variance: sigma2 + kappa*delta_t."""
    if sigma2 < 0 or delta_t < 0:
        raise ConfigError("sigma2 and delta_t must be >= 0")
    return sigma2 + kappa * delta_t


def combine_estimates(e1: float, v1: float, e2: float, v2: float) -> tuple[float, float]:
    """Inverse-variance weighted merge of two estimates.

    Returns ((e1/v1 + e2/v2)*v, v) with 1/v = 1/v1 + 1/v2; the combined
    variance never exceeds the smaller input variance.
    """
    if not (v1 > 0 and v2 > 0):
        raise ConfigError(f"variances must be > 0, got {v1}, {v2}")
    v = 1.0 / (1.0 / v1 + 1.0 / v2)
    return (e1 / v1 + e2 / v2) * v, v


@dataclass(frozen=True)
class FilterState:
    """Running estimate, its variance, and the open photocurrent window."""

    phi_hat: float
    sigma2: float
    window_integral: float = 0.0
    window_length: float = 0.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.window_length < 0:
            raise ConfigError("window length must be >= 0")

    def accumulate(self, I_dt: float, dt: float) -> "FilterState":
        """Extend the open window by one photocurrent sample."""
        return FilterState(self.phi_hat, self.sigma2,
                           self.window_integral + I_dt, self.window_length + dt)


def filter_update(state: FilterState, I_window: float, delta_t: float,
                  kappa: float, alpha: float) -> FilterState:
    """One discrete update of the inverse-variance filter.

    The windowed immediate estimate phi_hat + I_window/(2*alpha*delta_t)
    (variance 1/(4*alpha^2*delta_t)) is merged with the previous estimate
    (variance inflated by kappa*delta_t).  The variance recursion converges
    to the stationary tracking variance; its O(delta_t) offset from the
    continuous fixed point shrinks linearly with the window length.
    """
    if not delta_t > 0:
        raise ConfigError(f"delta_t must be > 0, got {delta_t}")
    e_imm = state.phi_hat + I_window / (2.0 * alpha * delta_t)
    v_imm = immediate_variance(alpha, delta_t)
    v_old = inflate_variance(state.sigma2, kappa, delta_t)
    e, v = combine_estimates(e_imm, v_imm, state.phi_hat, v_old)
    return FilterState(phi_hat=e, sigma2=v)


@dataclass(frozen=True)
class DemodState:
    """Exponentially weighted complex demodulator for a swept LO.

    A accumulates e^{i*Phi} * I dt with decay rate lam; under a detuning far
    above lam, e^{i*Phi}*cos(Phi - phi) time-averages to e^{i*phi}/2, so
    arg(A) estimates the signal phase.
    """

    A: complex = 0j
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"demodulator decay must be > 0, got {self.lam}")
        if not (math.isfinite(self.A.real) and math.isfinite(self.A.imag)):
            raise ConfigError("demodulator accumulator must be finite")


def demod_step(state: DemodState, Phi: float, I_dt: float, dt: float) -> DemodState:
    """Advance the demodulator: A <- A + e^{i*Phi}*I_dt - lam*A*dt."""
    A = state.A + cmath.exp(1j * Phi) * I_dt - state.lam * state.A * dt
    return DemodState(A=A, lam=state.lam)


def heterodyne_estimate(state: DemodState) -> float:
    """Phase of the demodulator accumulator, in (-pi, pi] (arg(-1) = +pi)."""
    if state.A == 0:
        raise NoSignalError("demodulator accumulator is zero; no signal to estimate")
    a = cmath.phase(state.A)
    if a == -math.pi:
        a = math.pi
    return a


def default_demod_rate(kappa: float, alpha: float) -> float:
    """Decay rate minimizing the demodulator MSE lam/(4*alpha^2) + kappa/(2*lam).

    The minimizer alpha*sqrt(2*kappa) reproduces the swept-LO tracking
    floor 1/sqrt(2N); verified numerically by the decay-rate sweep tests.
    """
    return alpha * math.sqrt(2.0 * kappa)
