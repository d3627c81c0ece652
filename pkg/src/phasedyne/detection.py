"""Scaled dyne photocurrent synthesis, with the squeezed-light noise model.

The photoreceiver output, suitably scaled, is

    I(t) dt = 2*alpha*cos(Phi - phi) dt + sqrt(V(Phi - phi)) dW

where Phi is the local-oscillator phase, phi the true signal phase, and V
the angle-dependent quadrature noise power.  Coherent light has V = 1 at
every angle (vacuum shot noise).  Squeezed light has noise power S < 1 in
the phase quadrature of the signal and S_a >= 1 in the amplitude
quadrature; broadband squeezing makes V depend only on the instantaneous
angle between LO and the true phase.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError

UNCERTAINTY_TOL = 1e-12


class NoiseKind(str, Enum):
    COHERENT = "coherent"
    SQUEEZED = "squeezed"


@dataclass(frozen=True)
class NoiseModel:
    """Coherent light, or squeezed light with quadrature powers (S, S_a)."""

    kind: NoiseKind = NoiseKind.COHERENT
    S: float = 1.0
    S_a: float = 1.0

    def __post_init__(self):
        if self.kind == NoiseKind.COHERENT:
            if self.S != 1.0 or self.S_a != 1.0:
                raise ConfigError("coherent light fixes S = S_a = 1")
            return
        if not 0 < self.S <= 1:
            raise ConfigError(f"squeezed phase quadrature needs 0 < S <= 1, got {self.S}")
        if not self.S_a >= 1:
            raise ConfigError(f"anti-squeezed quadrature needs S_a >= 1, got {self.S_a}")
        if self.S * self.S_a < 1 - UNCERTAINTY_TOL:
            raise ConfigError(
                f"S*S_a = {self.S * self.S_a:.6g} violates the uncertainty bound S*S_a >= 1"
            )

    @classmethod
    def coherent(cls) -> "NoiseModel":
        return cls(kind=NoiseKind.COHERENT)

    @classmethod
    def squeezed(cls, S: float, S_a: float | None = None) -> "NoiseModel":
        """Squeezed model; defaults to pure (minimum-uncertainty) S_a = 1/S."""
        if S_a is None:
            if not 0 < S <= 1:
                raise ConfigError(f"squeezed phase quadrature needs 0 < S <= 1, got {S}")
            S_a = 1.0 / S
        return cls(kind=NoiseKind.SQUEEZED, S=S, S_a=S_a)


def noise_power(theta, model: NoiseModel):
    """Quadrature noise power at angle theta = Phi - phi (true phase).

    S_a*cos^2(theta) + S*sin^2(theta), computed as S + (S_a - S)*cos^2 so
    that S = S_a = 1 reduces to exactly 1 and downstream arithmetic is
    bit-identical to the coherent model.  Accepts scalars or arrays.
    """
    if model.kind == NoiseKind.COHERENT:
        return np.ones_like(theta, dtype=float) if np.ndim(theta) else 1.0
    return model.S + (model.S_a - model.S) * np.cos(theta) ** 2


def photocurrent_increment(phi, Phi, alpha: float, model: NoiseModel, dW_zeta, dt: float):
    """Integrated photocurrent over one step, I*dt.

    dW_zeta must be drawn with variance dt from the shot-noise stream.
    Accepts scalars or arrays for phi/Phi/dW_zeta.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    theta = Phi - phi
    return 2.0 * alpha * np.cos(theta) * dt + np.sqrt(noise_power(theta, model)) * dW_zeta


def _noise_std_factor(theta, model: NoiseModel):
    """sqrt of the angle-dependent noise power (vector helper, same math)."""
    if model.kind == NoiseKind.COHERENT:
        return 1.0
    return np.sqrt(model.S + (model.S_a - model.S) * np.cos(theta) ** 2)
