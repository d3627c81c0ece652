import math

import numpy as np
import pytest

from phasedyne.analytics import HBAR, mse_vs_gain
from phasedyne.control import (
    ControllerSpec,
    adaptive_lo_step,
    heterodyne_lo_phase,
    kalman_gain,
    optimal_gain,
    optimal_gain_physical,
    riccati_step,
    stationary_variance,
)
from phasedyne.errors import ConfigError, StiffnessError
from phasedyne.harness import estimate_stationary_mse, make_run_setup, run_ensemble


class TestHeterodyneLoPhase:
    def test_at_origin(self):
        assert heterodyne_lo_phase(0.0, 100.0, 0.3) == 0.3

    def test_linear_advance(self):
        assert heterodyne_lo_phase(0.02, 100.0, 0.0) == pytest.approx(2.0)

    def test_full_revolution(self):
        delta = 73.0
        t = 2 * math.pi / delta
        assert heterodyne_lo_phase(t, delta, 0.5) - 0.5 == pytest.approx(2 * math.pi)


class TestAdaptiveLoStep:
    def test_zero_photocurrent(self):
        assert adaptive_lo_step(1.0, 0.0, 3.0, 2.0) == 1.0

    def test_arithmetic(self):
        assert adaptive_lo_step(0.0, 0.04, 2.0, 1.0) == pytest.approx(0.04)

    def test_invalid_gain(self):
        with pytest.raises(ConfigError):
            adaptive_lo_step(0.0, 0.1, 0.0, 1.0)


class TestOptimalGain:
    def test_unit_case(self):
        assert optimal_gain(1.0, 1.0) == pytest.approx(2.0)

    def test_n400(self):
        assert optimal_gain(1.0, 20.0) == pytest.approx(40.0)

    def test_minimizes_gain_law(self):
        # Numeric minimization oracle: the argmin of the stationary MSE over
        # a fine gain grid must sit at 2*alpha*sqrt(kappa).
        kappa, alpha = 1.3, 7.0
        grid = np.linspace(0.1, 100.0, 20001)
        values = [mse_vs_gain(chi, kappa, alpha) for chi in grid]
        best = grid[int(np.argmin(values))]
        assert best == pytest.approx(optimal_gain(kappa, alpha),
                                     abs=2 * (grid[1] - grid[0]))


class TestOptimalGainPhysical:
    def test_single_photon_per_coherence_time(self):
        kappa, omega = 1e4, 1.2e15
        power = HBAR * omega * kappa
        assert optimal_gain_physical(kappa, power, omega) == pytest.approx(2 * kappa)

    def test_matches_dimensionless_form(self):
        kappa, omega, power = 2.0, 1.5e15, 3e-9
        alpha = math.sqrt(power / (HBAR * omega))
        assert optimal_gain_physical(kappa, power, omega) == pytest.approx(
            optimal_gain(kappa, alpha))

    def test_square_root_power_scaling(self):
        g1 = optimal_gain_physical(1.0, 1e-9, 1e15)
        g4 = optimal_gain_physical(1.0, 4e-9, 1e15)
        assert g4 == pytest.approx(2 * g1)


class TestRiccatiStep:
    def test_fixed_point_is_stationary(self):
        kappa, alpha = 1.0, 10.0
        s = stationary_variance(kappa, alpha)
        assert riccati_step(s, kappa, alpha, 1e-3) == pytest.approx(s, rel=1e-12)

    def test_pure_diffusion_inflation(self):
        assert riccati_step(1.0, 1.0, 0.0, 0.1) == pytest.approx(1.1)

    def test_converges_to_stationary_variance(self):
        # Fixed-point iteration oracle: N = 100, so sigma2 -> 0.05.
        kappa, alpha, dt = 1.0, 10.0, 1e-4
        s = 1.0
        for _ in range(int(3.0 / dt)):
            s = riccati_step(s, kappa, alpha, dt)
        assert s == pytest.approx(0.05, rel=1e-3)

    def test_contraction_from_both_sides(self):
        kappa, alpha, dt = 1.0, 5.0, 1e-3
        hi, lo = 1.0, 1e-3
        gap = hi - lo
        for _ in range(2000):
            hi = riccati_step(hi, kappa, alpha, dt)
            lo = riccati_step(lo, kappa, alpha, dt)
            assert hi - lo < gap + 1e-15
            gap = hi - lo
        assert gap < 1e-6

    def test_step_size_violation_raises(self):
        with pytest.raises(StiffnessError):
            riccati_step(10.0, 1.0, 10.0, 0.1)

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ConfigError):
            riccati_step(0.0, 1.0, 1.0, 1e-3)


class TestKalmanGain:
    def test_stationary_matches_sqrt_kappa(self):
        kappa, alpha = 1.0, 1.0
        s = stationary_variance(kappa, alpha)
        assert kalman_gain(s, alpha) == pytest.approx(math.sqrt(kappa))

    def test_zero_variance_ignores_data(self):
        assert kalman_gain(0.0, 3.0) == 0.0

    def test_stationary_equals_fixed_gain_loop(self):
        # Ensemble equivalence: variance-matched controller at stationarity
        # and the fixed-gain loop at chi_opt track equally well.
        n = 100.0
        fixed = ControllerSpec.fixed_gain(optimal_gain(1.0, math.sqrt(n)))
        kalman = ControllerSpec.kalman_gain()
        cfg_f = make_run_setup(n, fixed, seed=301, n_traj=120, t_meas_factor=100)
        cfg_k = make_run_setup(n, kalman, seed=302, n_traj=120, t_meas_factor=100)
        res_f = estimate_stationary_mse(run_ensemble(cfg_f, fixed, record_traj=0))
        res_k = estimate_stationary_mse(run_ensemble(cfg_k, kalman, record_traj=0))
        pooled = math.hypot(res_f.stderr, res_k.stderr)
        assert abs(res_f.mse - res_k.mse) < 3 * pooled


class TestControllerSpec:
    def test_fixed_gain_needs_positive_chi(self):
        with pytest.raises(ConfigError):
            ControllerSpec.fixed_gain(0.0)

    def test_heterodyne_detuning_floor(self):
        with pytest.raises(ConfigError):
            ControllerSpec.heterodyne(detuning_factor=2.0)

    def test_kalman_sigma2_positive(self):
        with pytest.raises(ConfigError):
            ControllerSpec.kalman_gain(sigma2_init=0.0)
