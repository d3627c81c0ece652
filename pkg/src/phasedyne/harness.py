"""Monte Carlo ensemble runner, stationary-MSE statistics, parameter sweeps,
power-law fitting, and the optimal-squeezing search.

Trajectories are integrated with Euler steps of the coupled phase/LO
dynamics.  The production path vectorizes across trajectories (each
trajectory still owns its two deterministic noise streams, so results are
independent of batching); `run_trajectory` is the scalar reference path
built directly from the step operations, and the two are held together by
an equivalence test.  Errors are wrapped to (-pi, pi] only at measurement
time; cycle slips are counted on the unwrapped error and reported next to
every MSE.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from . import analytics
from .control import (
    ControllerKind,
    ControllerSpec,
    DETUNING_STEP_GUARD,
    MAX_LO_STEP,
    adaptive_lo_step,
    heterodyne_lo_phase,
    kalman_gain,
    optimal_gain,
    riccati_step,
    stationary_variance,
)
from .detection import NoiseModel, _noise_std_factor, photocurrent_increment
from .errors import AmbiguousMinimumWarning, ConfigError, StiffnessError
from .estimation import DemodState, default_demod_rate, demod_step, heterodyne_estimate
from .sde import (
    STIFFNESS_GUARD,
    SUBSTREAM_PHASE,
    SUBSTREAM_SHOT,
    SimConfig,
    derive_point_seed,
    gaussian_increment,
    step_phase,
    trajectory_stream,
)

TWO_PI = 2.0 * math.pi

DEFAULT_SLIP_THRESHOLD = math.pi / 2

#: Default fraction of the fastest rate per step (half the hard guard).
DEFAULT_GUARD_FRACTION = 0.01

#: Burn-in and measurement durations in units of the loop correlation time.
DEFAULT_BURN_FACTOR = 20.0
DEFAULT_MEAS_FACTOR = 200.0

#: Decimated samples kept per loop correlation time in saved records.
SAMPLES_PER_TAU = 10

#: Time blocks per trajectory, for single-trajectory standard errors.
N_TIME_BLOCKS = 16

_BLOCK_STEPS = 8192


def wrap_angle(x):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.negative(x) + math.pi, TWO_PI)
    return -(w - math.pi) if np.ndim(x) else float(-(w - math.pi))


def count_cycle_slips(errors, threshold: float = DEFAULT_SLIP_THRESHOLD) -> int:
    """Count threshold excursions of an unwrapped error series.

    An excursion starts when |error - reference| first exceeds the
    threshold; it ends (re-arming the counter) once the error settles
    within threshold/2 of some full turn, which becomes the new reference.
    """
    if not 0 < threshold <= math.pi:
        raise ConfigError(f"threshold must be in (0, pi], got {threshold}")
    counter = _SlipCounter(1, threshold)
    for e in np.asarray(errors, dtype=float):
        counter.update(np.array([e]))
    return int(counter.counts[0])


class _SlipCounter:
    """Vectorized excursion counter over unwrapped error series."""

    def __init__(self, n: int, threshold: float = DEFAULT_SLIP_THRESHOLD):
        self.threshold = threshold
        self.ref = np.zeros(n)
        self.excursion = np.zeros(n, dtype=bool)
        self.counts = np.zeros(n, dtype=np.int64)
        self.slip_steps: list[tuple[int, np.ndarray]] = []
        self._step = 0

    def update(self, eps_u: np.ndarray) -> None:
        dev = np.abs(eps_u - self.ref)
        started = ~self.excursion & (dev > self.threshold)
        if started.any():
            self.counts[started] += 1
            self.excursion |= started
            self.slip_steps.append((self._step, np.nonzero(started)[0]))
        if self.excursion.any():
            nearest = TWO_PI * np.round(eps_u / TWO_PI)
            settled = self.excursion & (np.abs(eps_u - nearest) < self.threshold / 2)
            self.ref = np.where(settled, nearest, self.ref)
            self.excursion &= ~settled
        self._step += 1


@dataclass
class TrajectoryRecord:
    """Decimated time series plus the sufficient statistics of one trajectory."""

    trajectory: int
    config: SimConfig
    controller_kind: str
    noise_kind: str
    times: np.ndarray
    phi: np.ndarray
    lo_phase: np.ndarray
    estimate: np.ndarray
    error: np.ndarray
    err_sq_sum: float
    n_err: int
    block_err_sq_sums: np.ndarray
    block_counts: np.ndarray
    slip_count: int
    slip_times: np.ndarray
    final_state: dict
    wall_time_s: float = 0.0

    def __post_init__(self):
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ConfigError("record sampling times must be strictly increasing")


@dataclass
class MseResult:
    """Pooled stationary MSE with its standard error and bookkeeping."""

    mse: float
    stderr: float
    n_samples: int
    slip_count: int
    config: dict
    wall_time_s: float = 0.0

    def __post_init__(self):
        if self.mse < 0:
            raise ConfigError("mse must be >= 0")
        if self.n_samples > 1 and not self.stderr > 0:
            raise ConfigError("stderr must be > 0 for more than one sample")


# ---------------------------------------------------------------------------
# Run setup
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ResolvedController:
    kind: ControllerKind
    chi: float = 0.0
    sigma2_init: float = 0.0
    Delta: float = 0.0
    lam: float = 0.0
    Phi0: float = 0.0
    base_rate: float = 0.0   # loop correlation rate (chi-like)
    guard_rate: float = 0.0  # fastest rate the step must resolve


def resolve_controller(spec: ControllerSpec, kappa: float, alpha: float) -> _ResolvedController:
    """Materialize rate defaults that depend on (kappa, alpha)."""
    chi_opt = optimal_gain(kappa, alpha)
    if spec.kind == ControllerKind.FIXED_GAIN:
        return _ResolvedController(
            kind=spec.kind, chi=spec.chi, Phi0=spec.Phi0,
            base_rate=spec.chi, guard_rate=max(kappa, spec.chi, chi_opt))
    if spec.kind == ControllerKind.KALMAN_GAIN:
        s2 = spec.sigma2_init if spec.sigma2_init is not None else stationary_variance(kappa, alpha)
        return _ResolvedController(
            kind=spec.kind, sigma2_init=s2, Phi0=spec.Phi0,
            base_rate=chi_opt, guard_rate=max(kappa, chi_opt, 4.0 * alpha**2 * s2))
    Delta = spec.detuning_factor * chi_opt
    lam = spec.demod_rate if spec.demod_rate is not None else default_demod_rate(kappa, alpha)
    return _ResolvedController(
        kind=spec.kind, Delta=Delta, lam=lam, Phi0=spec.Phi0,
        base_rate=lam, guard_rate=max(kappa, lam))


def plan_timings(kappa: float, alpha: float, spec: ControllerSpec,
                 guard_fraction: float = DEFAULT_GUARD_FRACTION,
                 t_burn_factor: float = DEFAULT_BURN_FACTOR,
                 t_meas_factor: float = DEFAULT_MEAS_FACTOR) -> tuple[float, float, float]:
    """Derive (dt, t_burn, t_meas) for a controller from its loop rates."""
    if not 0 < guard_fraction <= STIFFNESS_GUARD:
        raise ConfigError(
            f"guard_fraction must be in (0, {STIFFNESS_GUARD}], got {guard_fraction}")
    rc = resolve_controller(spec, kappa, alpha)
    dt = guard_fraction / rc.guard_rate
    if rc.Delta:
        dt = min(dt, DETUNING_STEP_GUARD / rc.Delta)
    return dt, t_burn_factor / rc.base_rate, t_meas_factor / rc.base_rate


def make_run_setup(n_photons: float, spec: ControllerSpec, *, kappa: float = 1.0,
                   seed: int = 0, n_traj: int = 200,
                   guard_fraction: float = DEFAULT_GUARD_FRACTION,
                   t_burn_factor: float = DEFAULT_BURN_FACTOR,
                   t_meas_factor: float = DEFAULT_MEAS_FACTOR) -> SimConfig:
    """SimConfig with dt and durations derived for the given controller."""
    alpha = math.sqrt(n_photons * kappa)
    dt, t_burn, t_meas = plan_timings(kappa, alpha, spec, guard_fraction,
                                      t_burn_factor, t_meas_factor)
    return SimConfig(alpha=alpha, dt=dt, t_burn=t_burn, t_meas=t_meas,
                     seed=seed, n_traj=n_traj, kappa=kappa)


def validate_setup(config: SimConfig, spec: ControllerSpec) -> _ResolvedController:
    """Check every step-size guard for the chosen controller."""
    rc = resolve_controller(spec, config.kappa, config.alpha)
    config.check_stiffness(rc.guard_rate)
    if rc.Delta and config.dt * rc.Delta > DETUNING_STEP_GUARD * (1 + 1e-12):
        raise ConfigError(
            f"swept-LO step too coarse: Delta*dt = {config.dt * rc.Delta:.3g} "
            f"exceeds {DETUNING_STEP_GUARD}")
    return rc


# ---------------------------------------------------------------------------
# Scalar reference trajectory
# ---------------------------------------------------------------------------


def run_trajectory(config: SimConfig, controller: ControllerSpec,
                   noise: NoiseModel | None = None, *, trajectory: int = 0,
                   shot_noise: bool = True) -> TrajectoryRecord:
    """Integrate one closed-loop trajectory with the scalar step operations.

    This is the readable reference path; `run_ensemble` is the vectorized
    production path and must agree with it sample for sample.  shot_noise
    False zeroes the detector noise stream (test fixture).
    """
    noise = noise or NoiseModel.coherent()
    rc = validate_setup(config, controller)
    kappa, alpha, dt = config.kappa, config.alpha, config.dt
    n_burn = int(round(config.t_burn / dt))
    n_meas = int(round(config.t_meas / dt))
    xi = trajectory_stream(config.seed, trajectory, SUBSTREAM_PHASE)
    zeta = trajectory_stream(config.seed, trajectory, SUBSTREAM_SHOT)

    stride = _decimation_stride(rc.base_rate, dt)
    t0 = time.perf_counter()
    phi = 0.0
    Phi = rc.Phi0
    sigma2 = rc.sigma2_init
    demod = DemodState(A=0j, lam=rc.lam) if rc.kind == ControllerKind.HETERODYNE else None
    est_u = 0.0
    prev_arg = None
    err_sq = 0.0
    n_err = 0
    block_sums = np.zeros(N_TIME_BLOCKS)
    block_counts = np.zeros(N_TIME_BLOCKS, dtype=np.int64)
    slips = _SlipCounter(1)
    saved: dict[str, list] = {"t": [], "phi": [], "Phi": [], "est": [], "err": []}

    for k in range(n_burn + n_meas):
        dW_xi = gaussian_increment(xi, dt)
        dW_ze = gaussian_increment(zeta, dt) if shot_noise else 0.0
        I_dt = photocurrent_increment(phi, Phi, alpha, noise, dW_ze, dt)
        if rc.kind == ControllerKind.FIXED_GAIN:
            new_Phi = adaptive_lo_step(Phi, I_dt, rc.chi, alpha)
        elif rc.kind == ControllerKind.KALMAN_GAIN:
            new_Phi = Phi + kalman_gain(sigma2, alpha) * I_dt
            sigma2 = riccati_step(sigma2, kappa, alpha, dt)
        else:
            new_Phi = heterodyne_lo_phase((k + 1) * dt, rc.Delta, rc.Phi0)
            demod = demod_step(demod, Phi, I_dt, dt)
        if rc.kind != ControllerKind.HETERODYNE and abs(new_Phi - Phi) > MAX_LO_STEP:
            raise StiffnessError(
                f"LO step {abs(new_Phi - Phi):.3g} rad exceeds the pi/4 cap",
                trajectory=trajectory, t=k * dt)
        Phi = new_Phi
        phi = step_phase(phi, kappa, dW_xi)
        if rc.kind == ControllerKind.HETERODYNE:
            arg = heterodyne_estimate(demod) if demod.A != 0 else 0.0
            est_u = arg if prev_arg is None else est_u + wrap_angle(arg - prev_arg)
            prev_arg = arg
        else:
            est_u = Phi - math.pi / 2
        if k >= n_burn:
            eps_u = est_u - phi
            w = wrap_angle(eps_u)
            err_sq += w * w
            n_err += 1
            b = min(N_TIME_BLOCKS - 1, (k - n_burn) * N_TIME_BLOCKS // n_meas)
            block_sums[b] += w * w
            block_counts[b] += 1
            slips.update(np.array([eps_u]))
            if (k - n_burn) % stride == 0:
                saved["t"].append((k + 1) * dt)
                saved["phi"].append(phi)
                saved["Phi"].append(Phi)
                saved["est"].append(est_u)
                saved["err"].append(w)

    slip_times = np.array([s * dt for s, _ in slips.slip_steps]) + config.t_burn
    return TrajectoryRecord(
        trajectory=trajectory, config=config, controller_kind=rc.kind.value,
        noise_kind=noise.kind.value,
        times=np.asarray(saved["t"]), phi=np.asarray(saved["phi"]),
        lo_phase=np.asarray(saved["Phi"]), estimate=np.asarray(saved["est"]),
        error=np.asarray(saved["err"]),
        err_sq_sum=err_sq, n_err=n_err,
        block_err_sq_sums=block_sums, block_counts=block_counts,
        slip_count=int(slips.counts[0]), slip_times=slip_times,
        final_state={"phi": phi, "lo_phase": Phi, "estimate": est_u,
                     "error": wrap_angle(est_u - phi)},
        wall_time_s=time.perf_counter() - t0)


def _decimation_stride(base_rate: float, dt: float) -> int:
    return max(1, int(round(1.0 / (SAMPLES_PER_TAU * base_rate * dt))))


# ---------------------------------------------------------------------------
# Vectorized ensemble
# ---------------------------------------------------------------------------


class _EnsembleAccumulator:
    """Shared measurement bookkeeping for the vectorized integrators."""

    def __init__(self, config: SimConfig, rc: _ResolvedController, n_rec: int):
        self.config = config
        self.rc = rc
        n = config.n_traj
        self.dt = config.dt
        self.n_burn = int(round(config.t_burn / config.dt))
        self.n_meas = int(round(config.t_meas / config.dt))
        self.n_steps = self.n_burn + self.n_meas
        self.stride = _decimation_stride(rc.base_rate, config.dt)
        self.n_rec = n_rec
        n_saved_max = (self.n_meas + self.stride - 1) // self.stride
        self.err_sq = np.zeros(n)
        self.block_sums = np.zeros((n, N_TIME_BLOCKS))
        self.block_counts = np.zeros(N_TIME_BLOCKS, dtype=np.int64)
        self.slips = _SlipCounter(n)
        self.rec = {key: np.zeros((n_rec, n_saved_max))
                    for key in ("t", "phi", "Phi", "est", "err")}
        self.n_saved = 0

    def measure_step(self, k: int, eps_u: np.ndarray, phi: np.ndarray,
                     Phi: np.ndarray, est_u: np.ndarray) -> None:
        """Record one post-burn-in step (adaptive path)."""
        w = wrap_angle(eps_u)
        w2 = w * w
        self.err_sq += w2
        tb = min(N_TIME_BLOCKS - 1, (k - self.n_burn) * N_TIME_BLOCKS // self.n_meas)
        self.block_sums[:, tb] += w2
        self.block_counts[tb] += 1
        self.slips.update(eps_u)
        if (k - self.n_burn) % self.stride == 0:
            j = self.n_saved
            self.rec["t"][:, j] = (k + 1) * self.dt
            self.rec["phi"][:, j] = phi[:self.n_rec]
            self.rec["Phi"][:, j] = Phi[:self.n_rec]
            self.rec["est"][:, j] = est_u[:self.n_rec]
            self.rec["err"][:, j] = w[:self.n_rec]
            self.n_saved += 1

    def measure_columns(self, k0: int, eps_u: np.ndarray, phi: np.ndarray,
                        Phi_cols: np.ndarray, est_u: np.ndarray) -> None:
        """Record a block of post-burn-in steps at once (columns are time).

        k0 is the global index of the first column; all columns must be at
        or past the burn-in boundary.
        """
        b = eps_u.shape[1]
        w = wrap_angle(eps_u)
        w2 = w * w
        self.err_sq += w2.sum(axis=1)
        rel = np.arange(k0 - self.n_burn, k0 - self.n_burn + b)
        tb = np.minimum(N_TIME_BLOCKS - 1, rel * N_TIME_BLOCKS // self.n_meas)
        for t in np.unique(tb):
            cols = tb == t
            self.block_sums[:, t] += w2[:, cols].sum(axis=1)
            self.block_counts[t] += int(cols.sum())
        self._slips_columns(k0, eps_u)
        saved_cols = np.nonzero(rel % self.stride == 0)[0]
        for j in saved_cols:
            m = self.n_saved
            self.rec["t"][:, m] = (k0 + j + 1) * self.dt
            self.rec["phi"][:, m] = phi[:self.n_rec, j]
            self.rec["Phi"][:, m] = Phi_cols[j]
            self.rec["est"][:, m] = est_u[:self.n_rec, j]
            self.rec["err"][:, m] = w[:self.n_rec, j]
            self.n_saved += 1

    def _slips_columns(self, k0: int, eps_u: np.ndarray) -> None:
        # Fast path: when no slip state machine can change anywhere in the
        # block, advance the step counter without touching per-step state.
        b = eps_u.shape[1]
        if not self.slips.excursion.any():
            dev = np.abs(eps_u - self.slips.ref[:, None])
            if not (dev > self.slips.threshold).any():
                self.slips._step += b
                return
        for j in range(b):
            self.slips.update(eps_u[:, j])

    def build_records(self, noise: NoiseModel, phi: np.ndarray, Phi: np.ndarray,
                      est_u: np.ndarray, elapsed: float) -> list[TrajectoryRecord]:
        config, n = self.config, self.config.n_traj
        slip_time_lists: list[list[float]] = [[] for _ in range(n)]
        for step, idx in self.slips.slip_steps:
            for i in idx:
                slip_time_lists[i].append(config.t_burn + step * self.dt)
        records = []
        for i in range(n):
            if i < self.n_rec:
                series = {key: self.rec[key][i, :self.n_saved].copy() for key in self.rec}
            else:
                series = {key: np.empty(0) for key in self.rec}
            records.append(TrajectoryRecord(
                trajectory=i, config=config, controller_kind=self.rc.kind.value,
                noise_kind=noise.kind.value,
                times=series["t"], phi=series["phi"], lo_phase=series["Phi"],
                estimate=series["est"], error=series["err"],
                err_sq_sum=float(self.err_sq[i]), n_err=self.n_meas,
                block_err_sq_sums=self.block_sums[i].copy(),
                block_counts=self.block_counts.copy(),
                slip_count=int(self.slips.counts[i]),
                slip_times=np.asarray(slip_time_lists[i]),
                final_state={"phi": float(phi[i]), "lo_phase": float(Phi[i]),
                             "estimate": float(est_u[i]),
                             "error": float(wrap_angle(est_u[i] - phi[i]))},
                wall_time_s=elapsed / n))
        return records


def run_ensemble(config: SimConfig, controller: ControllerSpec,
                 noise: NoiseModel | None = None, *, record_traj: int = 8,
                 shot_noise: bool = True) -> list[TrajectoryRecord]:
    """Integrate all trajectories of a config, vectorized across trajectories.

    Each trajectory consumes its own pair of deterministic streams, so the
    result is independent of block size and bit-reproducible run to run.
    record_traj limits how many trajectories keep decimated series; the MSE
    statistics always pool every trajectory at full step rate.
    """
    noise = noise or NoiseModel.coherent()
    rc = validate_setup(config, controller)
    if rc.kind == ControllerKind.HETERODYNE:
        return _run_heterodyne_ensemble(config, rc, noise, record_traj, shot_noise)
    return _run_adaptive_ensemble(config, rc, noise, record_traj, shot_noise)


def _draw_block(streams, block: np.ndarray, b: int, scale: float, zero: bool) -> None:
    if zero:
        block[:, :b] = 0.0
        return
    for i, stream in enumerate(streams):
        block[i, :b] = stream.standard_normal(b)
    block[:, :b] *= scale


def _run_adaptive_ensemble(config: SimConfig, rc: _ResolvedController,
                           noise: NoiseModel, record_traj: int,
                           shot_noise: bool) -> list[TrajectoryRecord]:
    n = config.n_traj
    kappa, alpha, dt = config.kappa, config.alpha, config.dt
    sqrt_dt = math.sqrt(dt)
    sqrt_kappa = math.sqrt(kappa)
    acc = _EnsembleAccumulator(config, rc, min(record_traj, n))

    t0 = time.perf_counter()
    xi_streams = [trajectory_stream(config.seed, i, SUBSTREAM_PHASE) for i in range(n)]
    ze_streams = [trajectory_stream(config.seed, i, SUBSTREAM_SHOT) for i in range(n)]
    phi = np.zeros(n)
    Phi = np.full(n, rc.Phi0)
    sigma2 = rc.sigma2_init
    est_u = np.zeros(n)
    coherent_noise = noise.kind.value == "coherent"
    fixed = rc.kind == ControllerKind.FIXED_GAIN
    gain_over = rc.chi / (2.0 * alpha) if fixed else 0.0
    xi_blk = np.empty((n, _BLOCK_STEPS))
    ze_blk = np.empty((n, _BLOCK_STEPS))

    k = 0
    while k < acc.n_steps:
        b = min(_BLOCK_STEPS, acc.n_steps - k)
        _draw_block(xi_streams, xi_blk, b, sqrt_dt, False)
        _draw_block(ze_streams, ze_blk, b, sqrt_dt, not shot_noise)
        for j in range(b):
            theta = Phi - phi
            I_dt = 2.0 * alpha * np.cos(theta) * dt
            if coherent_noise:
                I_dt += ze_blk[:, j]
            else:
                I_dt += _noise_std_factor(theta, noise) * ze_blk[:, j]
            if fixed:
                dPhi = gain_over * I_dt
            else:
                dPhi = kalman_gain(sigma2, alpha) * I_dt
                sigma2 = riccati_step(sigma2, kappa, alpha, dt)
            step_max = np.max(np.abs(dPhi))
            if step_max > MAX_LO_STEP:
                bad = int(np.argmax(np.abs(dPhi)))
                raise StiffnessError(
                    f"LO step {step_max:.3g} rad exceeds the pi/4 cap",
                    trajectory=bad, t=k * dt)
            Phi += dPhi
            phi += sqrt_kappa * xi_blk[:, j]
            est_u = Phi - math.pi / 2
            if k >= acc.n_burn:
                acc.measure_step(k, est_u - phi, phi, Phi, est_u)
            k += 1
        if np.isnan(phi).any() or np.isnan(Phi).any():
            bad = int(np.nonzero(np.isnan(phi) | np.isnan(Phi))[0][0])
            raise StiffnessError("NaN detected during integration",
                                 trajectory=bad, t=k * dt)
    return acc.build_records(noise, phi, Phi, est_u, time.perf_counter() - t0)


def _run_heterodyne_ensemble(config: SimConfig, rc: _ResolvedController,
                             noise: NoiseModel, record_traj: int,
                             shot_noise: bool) -> list[TrajectoryRecord]:
    """Swept-LO path: no feedback, so everything vectorizes over time too.

    The signal path (phi, photocurrent, demod drive) is computed blockwise;
    only the one-pole demodulator recursion runs stepwise, with the same
    arithmetic as `demod_step` so results match the scalar path.
    """
    n = config.n_traj
    kappa, alpha, dt = config.kappa, config.alpha, config.dt
    sqrt_dt = math.sqrt(dt)
    sqrt_kappa = math.sqrt(kappa)
    acc = _EnsembleAccumulator(config, rc, min(record_traj, n))

    t0 = time.perf_counter()
    xi_streams = [trajectory_stream(config.seed, i, SUBSTREAM_PHASE) for i in range(n)]
    ze_streams = [trajectory_stream(config.seed, i, SUBSTREAM_SHOT) for i in range(n)]
    phi_state = np.zeros(n)
    A = np.zeros(n, dtype=complex)
    prev_arg = np.zeros(n)
    have_arg = False
    est_offset = np.zeros(n)
    coherent_noise = noise.kind.value == "coherent"
    xi_blk = np.empty((n, _BLOCK_STEPS))
    ze_blk = np.empty((n, _BLOCK_STEPS))
    A_hist_t = np.empty((_BLOCK_STEPS, n), dtype=complex)
    last = {"phi": phi_state.copy(), "Phi": np.full(n, rc.Phi0),
            "est": np.zeros(n)}

    k = 0
    while k < acc.n_steps:
        b = min(_BLOCK_STEPS, acc.n_steps - k)
        _draw_block(xi_streams, xi_blk, b, sqrt_dt, False)
        _draw_block(ze_streams, ze_blk, b, sqrt_dt, not shot_noise)

        steps = np.arange(k, k + b)
        Phi_cols = rc.Phi0 + rc.Delta * steps * dt
        dphi = sqrt_kappa * xi_blk[:, :b]
        phi_after = phi_state[:, None] + np.cumsum(dphi, axis=1)
        phi_before = np.empty_like(phi_after)
        phi_before[:, 0] = phi_state
        phi_before[:, 1:] = phi_after[:, :-1]
        theta = Phi_cols[None, :] - phi_before
        I_dt = 2.0 * alpha * np.cos(theta) * dt
        if coherent_noise:
            I_dt += ze_blk[:, :b]
        else:
            I_dt += _noise_std_factor(theta, noise) * ze_blk[:, :b]
        # Time-major layout keeps the one-pole recursion on contiguous rows.
        drive = np.exp(1j * Phi_cols)[:, None] * I_dt.T
        lam_dt = rc.lam * dt
        for j in range(b):
            A = A + drive[j] - lam_dt * A
            A_hist_t[j] = A
        args = np.ascontiguousarray(np.angle(A_hist_t[:b]).T)
        if not have_arg:
            prev_arg = args[:, 0]
            have_arg = True
        # Nearest-branch continuity: accumulate wrapped angle increments on
        # top of the running unwrapped estimate.
        deltas = np.empty_like(args)
        deltas[:, 0] = args[:, 0] - prev_arg
        deltas[:, 1:] = np.diff(args, axis=1)
        est_u = (est_offset + prev_arg)[:, None] + np.cumsum(wrap_angle(deltas), axis=1)
        phi_state = phi_after[:, -1].copy()
        prev_arg = args[:, -1]
        est_offset = est_u[:, -1] - args[:, -1]

        lo = max(acc.n_burn - k, 0)
        if lo < b:
            acc.measure_columns(k + lo, est_u[:, lo:] - phi_after[:, lo:],
                                phi_after[:, lo:], Phi_cols[lo:], est_u[:, lo:])
        k += b
        last = {"phi": phi_state, "Phi": np.full(n, rc.Phi0 + rc.Delta * k * dt),
                "est": est_u[:, -1]}
        if np.isnan(phi_state).any() or np.isnan(A.real).any():
            bad = int(np.nonzero(np.isnan(phi_state) | np.isnan(A.real))[0][0])
            raise StiffnessError("NaN detected during integration",
                                 trajectory=bad, t=k * dt)
    return acc.build_records(noise, last["phi"], last["Phi"], last["est"],
                             time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def estimate_stationary_mse(records: list[TrajectoryRecord], *,
                            exclude_slipped: bool = False) -> MseResult:
    """Pool wrapped squared errors across trajectories and times.

    The standard error comes from per-trajectory means (trajectories are
    independent; within-trajectory samples are not); a single trajectory
    falls back to its time blocks.  Reduction is in trajectory-index order,
    so the result does not depend on the order records are passed in.
    """
    if not records:
        raise ConfigError("no records to estimate from")
    ordered = sorted(records, key=lambda r: r.trajectory)
    cfg = ordered[0].config
    for r in ordered:
        if r.config != cfg:
            raise ConfigError("records come from different configs")
    total_slips = sum(r.slip_count for r in ordered)
    used = [r for r in ordered if not (exclude_slipped and r.slip_count > 0)]
    if not used:
        raise ConfigError("all records excluded by the slip filter")

    n_samples = sum(r.n_err for r in used)
    mse = math.fsum(r.err_sq_sum for r in used) / n_samples
    if len(used) >= 2:
        means = np.array([r.err_sq_sum / r.n_err for r in used])
        stderr = float(np.std(means, ddof=1) / math.sqrt(len(means)))
    else:
        r = used[0]
        ok = r.block_counts > 0
        means = r.block_err_sq_sums[ok] / r.block_counts[ok]
        stderr = float(np.std(means, ddof=1) / math.sqrt(means.size)) if means.size > 1 else 0.0
    stderr = max(stderr, 1e-300) if n_samples > 1 else stderr
    return MseResult(
        mse=mse, stderr=stderr, n_samples=n_samples, slip_count=total_slips,
        config=_config_echo(cfg, used[0].controller_kind, used[0].noise_kind),
        wall_time_s=sum(r.wall_time_s for r in used))


def _config_echo(cfg: SimConfig, controller_kind: str, noise_kind: str) -> dict:
    return {
        "alpha": cfg.alpha, "kappa": cfg.kappa, "n_photons": cfg.n_photons,
        "dt": cfg.dt, "t_burn": cfg.t_burn, "t_meas": cfg.t_meas,
        "seed": cfg.seed, "n_traj": cfg.n_traj,
        "controller": controller_kind, "noise": noise_kind,
    }


def simulate(config: SimConfig, controller: ControllerSpec,
             noise: NoiseModel | None = None, *, record_traj: int = 8,
             shot_noise: bool = True,
             exclude_slipped: bool = False) -> tuple[list[TrajectoryRecord], MseResult]:
    """run_ensemble + estimate_stationary_mse in one call."""
    records = run_ensemble(config, controller, noise, record_traj=record_traj,
                           shot_noise=shot_noise)
    return records, estimate_stationary_mse(records, exclude_slipped=exclude_slipped)


# ---------------------------------------------------------------------------
# Power-law fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawFit:
    """mse ~ constant * x^exponent, fitted by least squares in log-log."""

    exponent: float
    constant: float
    residual: float


def fit_power_law(points) -> PowerLawFit:
    """Fit (x, y) pairs to y = c * x^p in log-log coordinates."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ConfigError("need at least 3 (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConfigError("power-law fit needs strictly positive points")
    lx, ly = np.log10(x), np.log10(y)
    if np.ptp(lx) == 0:
        raise ConfigError("power-law fit needs at least two distinct x values")
    coeffs, res, *_ = np.polyfit(lx, ly, 1, full=True)
    residual = float(np.sqrt(res[0])) if res.size else 0.0
    return PowerLawFit(exponent=float(coeffs[0]), constant=float(10.0 ** coeffs[1]),
                       residual=residual)


# ---------------------------------------------------------------------------
# Parameter sweeps
# ---------------------------------------------------------------------------


class SweepKind(str, Enum):
    GAIN = "gain"
    N = "n"
    SQUEEZE = "squeeze"
    HET_VS_ADAPTIVE = "het-vs-adaptive"


class SqueezeRule(str, Enum):
    NONE = "none"
    FIXED = "fixed"
    OPT_SCALING = "opt-scaling"  # S(N) = N^(-1/3)


@dataclass(frozen=True)
class SweepSpec:
    """One sweep experiment: a grid over gain ratio, N, or S.

    n_photons is the fixed N for gain/squeeze sweeps (the grid carries N
    itself for the others).  Timing per grid point is derived from the
    point's own loop rate.
    """

    kind: SweepKind
    grid: tuple[float, ...]
    n_photons: float | None = None
    kappa: float = 1.0
    seed: int = 0
    n_traj: int = 200
    squeeze_rule: SqueezeRule = SqueezeRule.NONE
    S: float | None = None
    S_a: float | None = None
    chi_ratio: float = 1.0
    guard_fraction: float = DEFAULT_GUARD_FRACTION
    t_burn_factor: float = DEFAULT_BURN_FACTOR
    t_meas_factor: float = DEFAULT_MEAS_FACTOR

    def __post_init__(self):
        if not self.grid:
            raise ConfigError("sweep grid must not be empty")
        if any(not g > 0 for g in self.grid):
            raise ConfigError("sweep grid values must be > 0")
        if self.kind in (SweepKind.GAIN, SweepKind.SQUEEZE):
            if self.n_photons is None or not self.n_photons > 0:
                raise ConfigError(f"{self.kind.value} sweep needs n_photons > 0")
        if self.kind == SweepKind.SQUEEZE and any(g > 1 for g in self.grid):
            raise ConfigError("squeeze sweep grid values must be in (0, 1]")
        if self.squeeze_rule == SqueezeRule.FIXED and self.S is None:
            raise ConfigError("fixed squeeze rule needs S")
        if not self.chi_ratio > 0:
            raise ConfigError("chi_ratio must be > 0")


@dataclass
class SweepRow:
    params: dict
    seed: int
    mse: float = math.nan
    stderr: float = math.nan
    n_samples: int = 0
    slip_count: int = 0
    analytic: float = math.nan
    ratio: float = math.nan
    error: str | None = None


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow]
    fit: PowerLawFit | None = None
    extras: dict = field(default_factory=dict)

    @property
    def failures(self) -> list[SweepRow]:
        return [r for r in self.rows if r.error is not None]


def _squeeze_for(spec: SweepSpec, n_photons: float) -> NoiseModel:
    if spec.squeeze_rule == SqueezeRule.NONE:
        return NoiseModel.coherent()
    if spec.squeeze_rule == SqueezeRule.FIXED:
        return NoiseModel.squeezed(spec.S, spec.S_a)
    return NoiseModel.squeezed(n_photons ** (-1.0 / 3.0))


def _squeezed_chi(kappa: float, alpha: float, S: float) -> float:
    """Gain prescription chi = kappa / sigma2 with the squeezed closed form."""
    return optimal_gain(kappa, alpha) / math.sqrt(S)


def _adaptive_point(spec: SweepSpec, n_photons: float, noise: NoiseModel,
                    chi: float, seed: int) -> tuple[MseResult, SimConfig]:
    controller = ControllerSpec.fixed_gain(chi)
    cfg = make_run_setup(n_photons, controller, kappa=spec.kappa, seed=seed,
                         n_traj=spec.n_traj, guard_fraction=spec.guard_fraction,
                         t_burn_factor=spec.t_burn_factor,
                         t_meas_factor=spec.t_meas_factor)
    _, result = simulate(cfg, controller, noise, record_traj=0)
    return result, cfg


def _analytic_for(noise: NoiseModel, n_photons: float, kappa: float,
                  alpha: float, chi: float) -> float:
    if noise.kind.value == "squeezed":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return analytics.mse_adaptive_squeezed(noise.S, n_photons)
    return analytics.mse_vs_gain(chi, kappa, alpha)


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Run every grid point, attaching the matching closed-form prediction.

    Per-point failures (step guards, saturation aborts) are recorded on the
    row and the sweep continues.
    """
    rows: list[SweepRow] = []
    extras: dict[str, Any] = {}
    for idx, g in enumerate(spec.grid):
        if spec.kind == SweepKind.HET_VS_ADAPTIVE:
            rows.extend(_het_vs_adaptive_point(spec, idx, g))
            continue
        seed = derive_point_seed(spec.seed, idx)
        if spec.kind == SweepKind.GAIN:
            params = {"chi_ratio": g, "n_photons": spec.n_photons}
        elif spec.kind == SweepKind.SQUEEZE:
            params = {"S": g, "n_photons": spec.n_photons}
        else:
            params = {"n_photons": g}
        row = SweepRow(params=params, seed=seed)
        try:
            if spec.kind == SweepKind.GAIN:
                n_photons = spec.n_photons
                noise = _squeeze_for(spec, n_photons)
                alpha = math.sqrt(n_photons * spec.kappa)
                chi = g * optimal_gain(spec.kappa, alpha)
            elif spec.kind == SweepKind.SQUEEZE:
                n_photons = spec.n_photons
                noise = NoiseModel.squeezed(g, spec.S_a)
                alpha = math.sqrt(n_photons * spec.kappa)
                chi = spec.chi_ratio * _squeezed_chi(spec.kappa, alpha, g)
            else:  # N sweep
                n_photons = g
                noise = _squeeze_for(spec, n_photons)
                alpha = math.sqrt(n_photons * spec.kappa)
                if noise.kind.value == "squeezed":
                    params["S"] = noise.S
                    chi = spec.chi_ratio * _squeezed_chi(spec.kappa, alpha, noise.S)
                else:
                    chi = spec.chi_ratio * optimal_gain(spec.kappa, alpha)
            row.analytic = _analytic_for(noise, n_photons, spec.kappa, alpha, chi)
            result, _ = _adaptive_point(spec, n_photons, noise, chi, seed)
            row.mse, row.stderr = result.mse, result.stderr
            row.n_samples, row.slip_count = result.n_samples, result.slip_count
            row.ratio = row.mse / row.analytic
        except (ConfigError, StiffnessError) as exc:
            row.error = str(exc)
        rows.append(row)

    fit = None
    if spec.kind == SweepKind.N:
        good = [(r.params["n_photons"], r.mse) for r in rows if r.error is None]
        if len(good) >= 3:
            fit = fit_power_law(good)
    if spec.kind == SweepKind.HET_VS_ADAPTIVE:
        extras["mse_ratio"] = _het_ratio_summary(rows)
    return SweepResult(spec=spec, rows=rows, fit=fit, extras=extras)


def _het_vs_adaptive_point(spec: SweepSpec, idx: int, n_photons: float) -> list[SweepRow]:
    rows = []
    alpha = math.sqrt(n_photons * spec.kappa)
    for scheme_idx, scheme in enumerate(("adaptive", "heterodyne")):
        seed = derive_point_seed(spec.seed, idx, scheme_idx)
        params = {"n_photons": n_photons, "scheme": scheme}
        row = SweepRow(params=params, seed=seed)
        try:
            if scheme == "adaptive":
                chi = optimal_gain(spec.kappa, alpha)
                row.analytic = analytics.mse_adaptive_coherent(n_photons)
                result, _ = _adaptive_point(spec, n_photons, NoiseModel.coherent(),
                                            chi, seed)
            else:
                controller = ControllerSpec.heterodyne()
                row.analytic = analytics.mse_heterodyne(n_photons)
                cfg = make_run_setup(n_photons, controller, kappa=spec.kappa,
                                     seed=seed, n_traj=spec.n_traj,
                                     guard_fraction=spec.guard_fraction,
                                     t_burn_factor=spec.t_burn_factor,
                                     t_meas_factor=spec.t_meas_factor)
                _, result = simulate(cfg, controller, record_traj=0)
            row.mse, row.stderr = result.mse, result.stderr
            row.n_samples, row.slip_count = result.n_samples, result.slip_count
            row.ratio = row.mse / row.analytic
        except (ConfigError, StiffnessError) as exc:
            row.error = str(exc)
        rows.append(row)
    return rows


def _het_ratio_summary(rows: list[SweepRow]) -> dict:
    by_n: dict[float, dict] = {}
    for r in rows:
        if r.error is None:
            by_n.setdefault(r.params["n_photons"], {})[r.params["scheme"]] = r.mse
    return {
        str(n): schemes["adaptive"] / schemes["heterodyne"]
        for n, schemes in sorted(by_n.items())
        if "adaptive" in schemes and "heterodyne" in schemes
    }


# ---------------------------------------------------------------------------
# Optimal squeezing search
# ---------------------------------------------------------------------------


@dataclass
class OptimalSqueezing:
    s_opt: float
    mse_opt: float
    stderr: float
    ambiguous: bool
    candidates: list[SweepRow]


def saturation_floor(kappa: float, alpha: float,
                     guard_fraction: float = DEFAULT_GUARD_FRACTION) -> float:
    """Smallest S whose matched-gain loop keeps LO steps well under the cap.

    The per-step LO kick scales as sqrt(chi*S_a*dt)/(2*alpha); requiring its
    rms to stay below MAX_LO_STEP/5 with the pure-squeezing gain rule gives
    S >= (guard_fraction*sqrt(kappa) / (2*alpha*cap^2))^(2/3).
    """
    cap2 = (MAX_LO_STEP / 5.0) ** 2
    return (guard_fraction * math.sqrt(kappa) / (2.0 * alpha * cap2)) ** (2.0 / 3.0)


def find_optimal_squeezing(n_photons: float, base: SimConfig | None = None, *,
                           kappa: float = 1.0, seed: int = 0, n_traj: int = 200,
                           coarse_points: int = 12, refine_half_width: int = 3,
                           refine_factor: float = 1.3,
                           guard_fraction: float = DEFAULT_GUARD_FRACTION
                           ) -> OptimalSqueezing:
    """Minimize the simulated MSE over the squeezing power S in (0, 1].

    Coarse log-spaced scan, then a finer scan around the best point and a
    parabola through the refined values in (log S, log mse).  Multiple local
    minima inside the error bars are reported as ambiguous, not resolved.
    The per-S gain follows the matched prescription chi = kappa/sigma2(S).
    """
    if base is not None:
        kappa, seed, n_traj = base.kappa, base.seed, base.n_traj
        if abs(base.n_photons - n_photons) > 1e-9 * n_photons:
            raise ConfigError("base config photon number disagrees with n_photons")
    if n_photons < 100:
        raise ConfigError("optimal-squeezing search needs N >= 100 to resolve the minimum")
    alpha = math.sqrt(n_photons * kappa)
    floor = max(saturation_floor(kappa, alpha, guard_fraction), 1e-3)

    def measure(S: float, point_seed: int, traj: int, t_factor: float) -> SweepRow:
        spec = SweepSpec(kind=SweepKind.SQUEEZE, grid=(S,), n_photons=n_photons,
                         kappa=kappa, seed=point_seed, n_traj=traj,
                         guard_fraction=guard_fraction, t_meas_factor=t_factor)
        return run_sweep(spec).rows[0]

    coarse_grid = np.geomspace(floor, 1.0, coarse_points)
    coarse = [measure(float(S), derive_point_seed(seed, 0, i),
                      max(50, n_traj // 2), 100.0)
              for i, S in enumerate(coarse_grid)]
    valid = [(i, r) for i, r in enumerate(coarse) if r.error is None]
    if not valid:
        raise ConfigError("no valid squeezing point; grid entirely in the aborting regime")
    i_best = min(valid, key=lambda ir: ir[1].mse)[0]

    center = float(coarse_grid[i_best])
    refine_grid = [center * refine_factor**j
                   for j in range(-refine_half_width, refine_half_width + 1)]
    refine_grid = [S for S in refine_grid if floor * 0.999 <= S <= 1.0]
    refined = [measure(float(S), derive_point_seed(seed, 1, i), n_traj, 200.0)
               for i, S in enumerate(refine_grid)]
    good = [(S, r) for S, r in zip(refine_grid, refined) if r.error is None]
    if len(good) < 3:
        raise ConfigError("too few valid refinement points for the squeezing search")

    s_vals = np.array([S for S, _ in good])
    mse_vals = np.array([r.mse for _, r in good])
    se_vals = np.array([r.stderr for _, r in good])
    j_best = int(np.argmin(mse_vals))

    lo = max(0, j_best - 2)
    hi = min(len(s_vals), j_best + 3)
    if hi - lo >= 3:
        c = np.polyfit(np.log(s_vals[lo:hi]), np.log(mse_vals[lo:hi]), 2)
        if c[0] > 0:
            x_opt = float(np.clip(-c[1] / (2 * c[0]),
                                  math.log(s_vals[lo]), math.log(s_vals[hi - 1])))
            s_opt = math.exp(x_opt)
        else:
            s_opt = float(s_vals[j_best])
    else:
        s_opt = float(s_vals[j_best])

    # Ambiguity: another local minimum within error bars, away from the best.
    ambiguous = False
    for j in range(1, len(mse_vals) - 1):
        if abs(j - j_best) < 2:
            continue
        if mse_vals[j] <= mse_vals[j - 1] and mse_vals[j] <= mse_vals[j + 1]:
            gap = mse_vals[j] - mse_vals[j_best]
            if gap <= 2.0 * math.hypot(se_vals[j], se_vals[j_best]):
                ambiguous = True
                warnings.warn(
                    f"squeezing minimum ambiguous: S={s_vals[j]:.3g} is within "
                    f"error bars of S={s_vals[j_best]:.3g}",
                    AmbiguousMinimumWarning, stacklevel=2)
    return OptimalSqueezing(
        s_opt=s_opt, mse_opt=float(mse_vals[j_best]), stderr=float(se_vals[j_best]),
        ambiguous=ambiguous, candidates=[r for _, r in good])
