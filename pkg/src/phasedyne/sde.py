"""Random-number streams, Wiener increments, and the diffusing true phase.

The unknown phase performs a random walk, d(phi) = sqrt(kappa) dW, where
kappa is the diffusion rate (the beam linewidth).  Everything downstream is
driven by two independent white-noise streams per trajectory: one for the
phase diffusion, one for the detector shot noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

# Fraction of the fastest closed-loop rate allowed per integrator step.
STIFFNESS_GUARD = 0.02

# Sub-stream tags within a trajectory (phase diffusion vs shot noise).
SUBSTREAM_PHASE = 0
SUBSTREAM_SHOT = 1


@dataclass(frozen=True)
class SimConfig:
    """Physical parameters, discretization, and reproducibility knobs.

    Dimensionless default units: kappa = 1 sets the time unit, so
    alpha = sqrt(N) with N the mean photon number per coherence time.
    """

    alpha: float
    dt: float
    t_burn: float
    t_meas: float
    seed: int = 0
    n_traj: int = 1
    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be > 0, got {self.kappa}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if not (self.t_burn > 0 and self.t_meas > 0):
            raise ConfigError(
                f"t_burn and t_meas must be > 0, got {self.t_burn}, {self.t_meas}"
            )
        if self.n_traj < 1:
            raise ConfigError(f"n_traj must be >= 1, got {self.n_traj}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def n_photons(self) -> float:
        """Photons per coherence time, N = alpha^2 / kappa."""
        return self.alpha**2 / self.kappa

    @classmethod
    def from_photon_number(cls, n_photons: float, **kwargs) -> "SimConfig":
        kappa = kwargs.get("kappa", 1.0)
        if not n_photons > 0:
            raise ConfigError(f"N must be > 0, got {n_photons}")
        return cls(alpha=math.sqrt(n_photons * kappa), **kwargs)

    def check_stiffness(self, max_rate: float) -> None:
        """Enforce dt * max(kappa, fastest loop rate) <= STIFFNESS_GUARD."""
        rate = max(self.kappa, max_rate)
        if self.dt * rate > STIFFNESS_GUARD * (1 + 1e-12):
            raise ConfigError(
                f"step too coarse: dt*rate = {self.dt * rate:.3g} exceeds the "
                f"guard dt*max(kappa, chi) <= {STIFFNESS_GUARD}"
            )

    def replace(self, **kwargs) -> "SimConfig":
        return replace(self, **kwargs)


@dataclass
class RngStream:
    """Deterministic Gaussian stream keyed by (seed, stream_id).

    Backed by a counter-based generator, so identical keys always reproduce
    the identical sample sequence and distinct stream ids are statistically
    independent regardless of draw order.
    """

    seed: int
    stream_id: int
    _gen: np.random.Generator = field(repr=False, default=None)

    def __post_init__(self):
        if self._gen is None:
            key = (int(self.seed) & (2**64 - 1)) | (int(self.stream_id) << 64)
            self._gen = np.random.Generator(np.random.Philox(key=key))

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)


def make_stream(seed: int, stream_id: int) -> RngStream:
    """Create the deterministic stream for (seed, stream_id)."""
    if stream_id < 0:
        raise ConfigError(f"stream_id must be >= 0, got {stream_id}")
    return RngStream(seed=seed, stream_id=stream_id)


def trajectory_stream(seed: int, trajectory: int, substream: int) -> RngStream:
    """Per-trajectory sub-stream: id = 2*trajectory + substream."""
    return make_stream(seed, 2 * trajectory + substream)


def derive_point_seed(seed: int, *spawn_key: int) -> int:
    """Stable 64-bit seed for a sweep grid point (or any sub-experiment).

    Uses the documented spawn-key mechanism so grid points never share
    streams with each other or with the base seed's trajectory streams.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in spawn_key))
    return int(ss.generate_state(1, np.uint64)[0])


def gaussian_increment(stream: RngStream, dt: float) -> float:
    """One Wiener increment: N(0, dt) sample from the given stream."""
    if not dt > 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    return float(stream.standard_normal()) * math.sqrt(dt)


def step_phase(phi: float, kappa: float, dW: float) -> float:
    """Advance the diffusing true phase: phi + sqrt(kappa)*dW, unwrapped."""
    if kappa < 0:
        raise ConfigError(f"kappa must be >= 0, got {kappa}")
    return phi + math.sqrt(kappa) * dW
