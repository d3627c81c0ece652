import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import phasedyne.harness as harness
from phasedyne.control import ControllerSpec, optimal_gain
from phasedyne.detection import NoiseModel
from phasedyne.errors import ConfigError, StiffnessError
from phasedyne.harness import (
    SqueezeRule,
    SweepKind,
    SweepSpec,
    TrajectoryRecord,
    count_cycle_slips,
    estimate_stationary_mse,
    find_optimal_squeezing,
    fit_power_law,
    make_run_setup,
    plan_timings,
    run_ensemble,
    run_sweep,
    run_trajectory,
    simulate,
    wrap_angle,
)
from phasedyne.sde import SimConfig


class TestWrapAngle:
    @pytest.mark.parametrize("x,expect", [
        (0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi),
        (3 * math.pi, math.pi), (math.pi + 0.1, -math.pi + 0.1),
        (-0.3, -0.3), (2 * math.pi, 0.0),
    ])
    def test_values(self, x, expect):
        assert wrap_angle(x) == pytest.approx(expect, abs=1e-12)

    @given(st.floats(-50.0, 50.0))
    def test_range_and_congruence(self, x):
        w = wrap_angle(x)
        assert -math.pi < w <= math.pi
        assert (x - w) / (2 * math.pi) == pytest.approx(
            round((x - w) / (2 * math.pi)), abs=1e-6)

    def test_vectorized(self):
        xs = np.array([0.0, 4.0, -4.0, 10.0])
        ws = wrap_angle(xs)
        assert ws.shape == xs.shape
        assert np.all(ws > -math.pi) and np.all(ws <= math.pi)


class TestCycleSlips:
    def test_bounded_series_has_none(self):
        t = np.linspace(0, 10, 500)
        assert count_cycle_slips(0.1 * np.sin(t)) == 0

    def test_monotone_ramp_counts_once(self):
        ramp = np.linspace(0.0, 2 * math.pi, 400)
        assert count_cycle_slips(ramp) == 1

    def test_two_full_turns_count_twice(self):
        ramp = np.linspace(0.0, 4 * math.pi, 800)
        assert count_cycle_slips(ramp) == 2

    def test_round_trip_counts_twice(self):
        there = np.linspace(0.0, 2 * math.pi, 400)
        back = np.linspace(2 * math.pi, 0.0, 400)
        assert count_cycle_slips(np.concatenate([there, back])) == 2

    def test_threshold_validation(self):
        with pytest.raises(ConfigError):
            count_cycle_slips([0.0], threshold=0.0)
        with pytest.raises(ConfigError):
            count_cycle_slips([0.0], threshold=4.0)

    def test_excursion_without_settling_counts_once(self):
        # Crosses the threshold, hovers, returns: one event.
        series = np.concatenate([np.linspace(0, 2.0, 100),
                                 np.full(100, 2.0),
                                 np.linspace(2.0, 0.0, 100)])
        assert count_cycle_slips(series) == 1


def tiny_config(n, controller, **kw):
    kw.setdefault("n_traj", 3)
    kw.setdefault("t_burn_factor", 2.0)
    kw.setdefault("t_meas_factor", 6.0)
    kw.setdefault("seed", 97)
    return make_run_setup(n, controller, **kw)


class TestRunTrajectory:
    def test_noise_free_lock_is_exact(self):
        # kappa ~ 0 and zero shot noise with a locked start: the error stays
        # at the fixed point for the whole trajectory.
        controller = ControllerSpec.fixed_gain(2.0)
        cfg = SimConfig(alpha=1.0, dt=1e-3, t_burn=0.1, t_meas=0.5,
                        kappa=1e-300, seed=1, n_traj=1)
        rec = run_trajectory(cfg, controller, shot_noise=False)
        assert np.max(np.abs(rec.error)) < 1e-12
        assert rec.slip_count == 0

    def test_deterministic(self):
        controller = ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0))
        cfg = tiny_config(100.0, controller)
        a = run_trajectory(cfg, controller, trajectory=1)
        b = run_trajectory(cfg, controller, trajectory=1)
        assert np.array_equal(a.phi, b.phi)
        assert a.err_sq_sum == b.err_sq_sum

    def test_trajectories_differ(self):
        controller = ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0))
        cfg = tiny_config(100.0, controller)
        a = run_trajectory(cfg, controller, trajectory=0)
        b = run_trajectory(cfg, controller, trajectory=1)
        assert not np.array_equal(a.phi, b.phi)

    def test_record_invariants(self):
        controller = ControllerSpec.kalman_gain()
        cfg = tiny_config(100.0, controller)
        rec = run_trajectory(cfg, controller)
        assert np.all(np.diff(rec.times) > 0)
        assert np.all(rec.error > -math.pi) and np.all(rec.error <= math.pi)
        assert rec.n_err == int(round(cfg.t_meas / cfg.dt))


class TestScalarVectorEquivalence:
    @pytest.mark.parametrize("make_controller", [
        lambda: ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0)),
        lambda: ControllerSpec.kalman_gain(),
        lambda: ControllerSpec.heterodyne(),
    ])
    def test_paths_agree(self, make_controller):
        controller = make_controller()
        cfg = tiny_config(100.0, controller)
        vec = run_ensemble(cfg, controller, record_traj=cfg.n_traj)
        for i in range(cfg.n_traj):
            ref = run_trajectory(cfg, controller, trajectory=i)
            assert vec[i].err_sq_sum == pytest.approx(ref.err_sq_sum,
                                                      rel=1e-9, abs=1e-12)
            assert vec[i].final_state["phi"] == pytest.approx(
                ref.final_state["phi"], abs=1e-9)
            assert vec[i].final_state["estimate"] == pytest.approx(
                ref.final_state["estimate"], abs=1e-9)
            assert np.allclose(vec[i].error, ref.error, atol=1e-9)
            assert vec[i].slip_count == ref.slip_count

    def test_squeezed_noise_path(self):
        controller = ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0))
        cfg = tiny_config(100.0, controller)
        noise = NoiseModel.squeezed(0.5, 2.0)
        vec = run_ensemble(cfg, controller, noise, record_traj=cfg.n_traj)
        ref = run_trajectory(cfg, controller, noise, trajectory=2)
        assert vec[2].err_sq_sum == pytest.approx(ref.err_sq_sum, rel=1e-9)


class TestRunEnsemble:
    def test_bit_reproducible(self):
        controller = ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0))
        cfg = tiny_config(100.0, controller, n_traj=4)
        a = run_ensemble(cfg, controller, record_traj=4)
        b = run_ensemble(cfg, controller, record_traj=4)
        for ra, rb in zip(a, b):
            assert ra.err_sq_sum == rb.err_sq_sum
            assert np.array_equal(ra.error, rb.error)

    def test_block_size_invariance(self, monkeypatch):
        controller = ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0))
        cfg = tiny_config(100.0, controller, n_traj=2)
        full = run_ensemble(cfg, controller, record_traj=2)
        monkeypatch.setattr(harness, "_BLOCK_STEPS", 61)
        chopped = run_ensemble(cfg, controller, record_traj=2)
        for ra, rb in zip(full, chopped):
            assert ra.err_sq_sum == rb.err_sq_sum
            assert np.array_equal(ra.error, rb.error)

    def test_heterodyne_block_size_invariance(self, monkeypatch):
        controller = ControllerSpec.heterodyne()
        cfg = tiny_config(100.0, controller, n_traj=2)
        full = run_ensemble(cfg, controller, record_traj=2)
        monkeypatch.setattr(harness, "_BLOCK_STEPS", 173)
        chopped = run_ensemble(cfg, controller, record_traj=2)
        for ra, rb in zip(full, chopped):
            assert ra.err_sq_sum == pytest.approx(rb.err_sq_sum, rel=1e-12)
            assert np.allclose(ra.error, rb.error, atol=1e-10)

    def test_unit_squeezing_matches_coherent_bitwise(self):
        controller = ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0))
        cfg = tiny_config(100.0, controller, n_traj=3)
        a = run_ensemble(cfg, controller, NoiseModel.coherent(), record_traj=0)
        b = run_ensemble(cfg, controller, NoiseModel.squeezed(1.0, 1.0), record_traj=0)
        for ra, rb in zip(a, b):
            assert ra.err_sq_sum == rb.err_sq_sum

    def test_saturation_abort(self):
        # A gain far past the step guard must abort loudly, not corrupt stats.
        controller = ControllerSpec.fixed_gain(1e4)
        cfg = SimConfig(alpha=1.0, dt=5e-3, t_burn=0.05, t_meas=0.05,
                        seed=5, n_traj=2)
        with pytest.raises((StiffnessError, ConfigError)):
            run_ensemble(cfg, controller, record_traj=0)

    def test_weak_convergence_in_dt(self):
        # Halving dt leaves the stationary MSE unchanged within noise.
        controller = ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0))
        cfg = make_run_setup(100.0, controller, seed=61, n_traj=80,
                             t_meas_factor=60.0)
        res_a = estimate_stationary_mse(run_ensemble(cfg, controller, record_traj=0))
        cfg_half = cfg.replace(dt=cfg.dt / 2, seed=62)
        res_b = estimate_stationary_mse(run_ensemble(cfg_half, controller,
                                                     record_traj=0))
        pooled = math.hypot(res_a.stderr, res_b.stderr)
        assert abs(res_a.mse - res_b.mse) < 3.5 * pooled


def synthetic_record(traj, err, config, kind="fixed-gain"):
    err = np.asarray(err, dtype=float)
    n_blocks = 16
    edges = np.linspace(0, err.size, n_blocks + 1).astype(int)
    block_sums = np.array([np.sum(err[a:b] ** 2) for a, b in zip(edges, edges[1:])])
    block_counts = np.diff(edges).astype(np.int64)
    return TrajectoryRecord(
        trajectory=traj, config=config, controller_kind=kind,
        noise_kind="coherent", times=np.arange(err.size, dtype=float) + 1,
        phi=np.zeros(err.size), lo_phase=np.zeros(err.size),
        estimate=np.zeros(err.size), error=wrap_angle(err),
        err_sq_sum=float(np.sum(err**2)), n_err=err.size,
        block_err_sq_sums=block_sums, block_counts=block_counts,
        slip_count=count_cycle_slips(err), slip_times=np.empty(0),
        final_state={}, wall_time_s=0.0)


@pytest.fixture
def base_config():
    return SimConfig(alpha=10.0, dt=1e-3, t_burn=0.1, t_meas=1.0, seed=3, n_traj=2)


class TestEstimateStationaryMse:
    def test_constant_series(self, base_config):
        rec = synthetic_record(0, np.full(1000, 0.1), base_config)
        res = estimate_stationary_mse([rec])
        assert res.mse == pytest.approx(0.01, rel=1e-12)
        assert res.stderr >= 0
        assert res.n_samples == 1000

    def test_reorder_invariance(self, base_config):
        rng = np.random.default_rng(0)
        recs = [synthetic_record(i, rng.normal(0, 0.2, 500), base_config)
                for i in range(6)]
        a = estimate_stationary_mse(recs)
        b = estimate_stationary_mse(recs[::-1])
        assert a.mse == b.mse  # identical reduction order after sorting

    def test_linear_process_oracle(self, base_config):
        # Feed the estimator a synthetic stationary first-order process with
        # known variance and check the pooled MSE with its standard error.
        rng = np.random.default_rng(7)
        rate, q, dt = 5.0, 2.0, 1e-3
        target = q / (2 * rate)
        recs = []
        for i in range(40):
            eps = np.empty(4000)
            x = math.sqrt(target) * rng.standard_normal()
            for k in range(eps.size):
                x = x * (1 - rate * dt) + math.sqrt(q * dt) * rng.standard_normal()
                eps[k] = x
            recs.append(synthetic_record(i, eps, base_config))
        res = estimate_stationary_mse(recs)
        assert abs(res.mse - target) < 3 * res.stderr

    def test_slip_policy(self, base_config):
        quiet = synthetic_record(0, np.full(100, 0.1), base_config)
        slipped = synthetic_record(1, np.linspace(0, 2 * math.pi, 100), base_config)
        both = estimate_stationary_mse([quiet, slipped])
        assert both.slip_count == 1
        only = estimate_stationary_mse([quiet, slipped], exclude_slipped=True)
        assert only.mse == pytest.approx(0.01, rel=1e-12)
        assert only.slip_count == 1  # still reported

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            estimate_stationary_mse([])

    def test_mixed_configs_rejected(self, base_config):
        other = base_config.replace(seed=4)
        recs = [synthetic_record(0, np.full(10, 0.1), base_config),
                synthetic_record(1, np.full(10, 0.1), other)]
        with pytest.raises(ConfigError):
            estimate_stationary_mse(recs)

    def test_stderr_scaling_with_trajectories(self):
        controller = ControllerSpec.fixed_gain(optimal_gain(1.0, 10.0))
        cfg = make_run_setup(100.0, controller, seed=71, n_traj=60,
                             t_meas_factor=40.0)
        res_small = estimate_stationary_mse(run_ensemble(cfg, controller, record_traj=0))
        cfg2 = cfg.replace(n_traj=120)
        res_big = estimate_stationary_mse(run_ensemble(cfg2, controller, record_traj=0))
        ratio = res_big.stderr / res_small.stderr
        assert 1 / math.sqrt(2) * 0.8 <= ratio <= 1 / math.sqrt(2) * 1.25

    def test_single_trajectory_stderr_from_blocks(self, base_config):
        rng = np.random.default_rng(9)
        rec = synthetic_record(0, rng.normal(0, 0.3, 3200), base_config)
        res = estimate_stationary_mse([rec])
        assert res.stderr > 0
        assert abs(res.mse - 0.09) < 4 * res.stderr


class TestFitPowerLaw:
    def test_exact_half_law(self):
        ns = np.array([1e2, 1e3, 1e4, 1e5])
        fit = fit_power_law(list(zip(ns, 0.5 * ns**-0.5)))
        assert fit.exponent == pytest.approx(-0.5, abs=1e-12)
        assert fit.constant == pytest.approx(0.5, rel=1e-12)
        assert fit.residual < 1e-12

    def test_exact_two_thirds_law(self):
        ns = np.array([1e2, 1e3, 1e4])
        fit = fit_power_law(list(zip(ns, 0.63 * ns ** (-2 / 3))))
        assert fit.exponent == pytest.approx(-2 / 3, abs=1e-12)
        assert fit.constant == pytest.approx(0.63, rel=1e-9)

    def test_noisy_recovery(self):
        rng = np.random.default_rng(12)
        ns = np.geomspace(1e2, 1e5, 30)
        ys = 0.5 * ns**-0.5 * (1 + 0.05 * rng.standard_normal(30))
        fit = fit_power_law(list(zip(ns, ys)))
        assert fit.exponent == pytest.approx(-0.5, abs=0.05)

    def test_degenerate_inputs(self):
        with pytest.raises(ConfigError):
            fit_power_law([(1.0, 1.0), (2.0, 0.5)])
        with pytest.raises(ConfigError):
            fit_power_law([(1.0, 1.0), (1.0, 0.5), (1.0, 0.2)])
        with pytest.raises(ConfigError):
            fit_power_law([(1.0, 1.0), (2.0, -0.5), (3.0, 0.2)])


class TestPlanTimings:
    def test_fixed_gain_guards(self):
        spec = ControllerSpec.fixed_gain(40.0)
        dt, t_burn, t_meas = plan_timings(1.0, 20.0, spec)
        assert dt * 40.0 <= 0.02 + 1e-12
        assert t_burn == pytest.approx(20.0 / 40.0)
        assert t_meas == pytest.approx(200.0 / 40.0)

    def test_low_gain_still_guards_optimum(self):
        spec = ControllerSpec.fixed_gain(10.0)  # = chi_opt/4 at N=400
        dt, _, t_meas = plan_timings(1.0, 20.0, spec)
        assert dt * 40.0 <= 0.02 + 1e-12  # guarded by chi_opt, not chi
        assert t_meas == pytest.approx(20.0)  # measured in units of 1/chi

    def test_heterodyne_detuning_guard(self):
        spec = ControllerSpec.heterodyne()
        dt, _, _ = plan_timings(1.0, 20.0, spec)
        assert dt * 50 * 40.0 <= 0.05 + 1e-12

    def test_guard_fraction_bounds(self):
        with pytest.raises(ConfigError):
            plan_timings(1.0, 1.0, ControllerSpec.fixed_gain(1.0), guard_fraction=0.5)


class TestRunSweep:
    def test_gain_sweep_shape_and_overlay(self):
        spec = SweepSpec(kind=SweepKind.GAIN, grid=(0.5, 1.0, 2.0),
                         n_photons=100.0, seed=41, n_traj=60, t_meas_factor=60.0)
        result = run_sweep(spec)
        assert len(result.rows) == 3
        for row in result.rows:
            assert row.error is None
            assert row.ratio == pytest.approx(1.0, abs=0.15)
            assert row.seed != spec.seed

    def test_failed_point_recorded_and_sweep_continues(self):
        # N below 1 makes the scaling rule ask for S > 1: that grid point
        # fails validation, the others still run.
        spec = SweepSpec(kind=SweepKind.N, grid=(0.5, 100.0),
                         squeeze_rule=SqueezeRule.OPT_SCALING,
                         seed=42, n_traj=20, t_meas_factor=20.0)
        result = run_sweep(spec)
        assert result.rows[0].error is not None
        assert result.rows[1].error is None
        assert len(result.failures) == 1

    def test_het_vs_adaptive_rows(self):
        spec = SweepSpec(kind=SweepKind.HET_VS_ADAPTIVE, grid=(25.0,),
                         seed=43, n_traj=40, t_meas_factor=40.0)
        result = run_sweep(spec)
        schemes = {r.params["scheme"] for r in result.rows}
        assert schemes == {"adaptive", "heterodyne"}
        assert "mse_ratio" in result.extras
        ratio = list(result.extras["mse_ratio"].values())[0]
        assert 0.4 < ratio < 1.1

    def test_n_sweep_fit_attached(self):
        spec = SweepSpec(kind=SweepKind.N, grid=(50.0, 100.0, 200.0),
                         seed=44, n_traj=50, t_meas_factor=50.0)
        result = run_sweep(spec)
        assert result.fit is not None
        assert result.fit.exponent == pytest.approx(-0.5, abs=0.12)

    def test_matched_seed_unit_squeezing_table_identical(self):
        base = dict(kind=SweepKind.SQUEEZE, grid=(1.0,), n_photons=100.0,
                    seed=45, n_traj=30, t_meas_factor=30.0)
        squeezed = run_sweep(SweepSpec(**base))
        coherent = run_sweep(SweepSpec(kind=SweepKind.GAIN, grid=(1.0,),
                                       n_photons=100.0, seed=45, n_traj=30,
                                       t_meas_factor=30.0))
        assert squeezed.rows[0].mse == coherent.rows[0].mse

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            SweepSpec(kind=SweepKind.GAIN, grid=())
        with pytest.raises(ConfigError):
            SweepSpec(kind=SweepKind.GAIN, grid=(1.0,))  # missing n_photons
        with pytest.raises(ConfigError):
            SweepSpec(kind=SweepKind.SQUEEZE, grid=(2.0,), n_photons=100.0)


class TestDemodRateOptimality:
    def test_default_rate_is_the_sweep_minimum(self):
        # The demodulator decay sweep must dip at alpha*sqrt(2*kappa) and
        # reach the swept-LO floor there (coarse grid, statistical check).
        n = 100.0
        alpha = math.sqrt(n)
        lam_star = alpha * math.sqrt(2.0)
        values = {}
        for i, factor in enumerate((0.5, 1.0, 2.0)):
            controller = ControllerSpec.heterodyne(demod_rate=factor * lam_star)
            cfg = make_run_setup(n, controller, seed=800 + i, n_traj=100,
                                 t_meas_factor=60.0)
            _, res = simulate(cfg, controller, record_traj=0)
            values[factor] = res.mse
        assert values[1.0] < values[0.5]
        assert values[1.0] < values[2.0]
        assert values[1.0] == pytest.approx(1 / math.sqrt(2 * n), rel=0.07)


class TestSlipRateComparative:
    def test_deep_small_n_slips_more(self):
        # No closed form exists for slip rates; the comparison is the check:
        # tracking at N = 4 loses lock far more often than at N = 400.
        def total_slips(n, seed):
            controller = ControllerSpec.fixed_gain(optimal_gain(1.0, math.sqrt(n)))
            cfg = make_run_setup(n, controller, seed=seed, n_traj=50,
                                 t_meas_factor=150.0)
            res = estimate_stationary_mse(run_ensemble(cfg, controller, record_traj=0))
            return res.slip_count

        assert total_slips(4.0, 81) > total_slips(400.0, 82)


class TestFindOptimalSqueezing:
    def test_small_n_rejected(self):
        with pytest.raises(ConfigError):
            find_optimal_squeezing(50.0)

    def test_base_config_must_match(self):
        cfg = SimConfig(alpha=10.0, dt=1e-4, t_burn=1.0, t_meas=1.0)
        with pytest.raises(ConfigError):
            find_optimal_squeezing(400.0, cfg)

    def test_squeezing_beats_coherent_at_n1000(self):
        res = find_optimal_squeezing(1000.0, seed=51, n_traj=60,
                                     coarse_points=8, refine_half_width=2)
        assert res.s_opt < 1.0
        coherent_level = 0.5 / math.sqrt(1000.0)
        assert res.mse_opt < coherent_level
        # optimum should land within a factor ~2.5 of N^(-1/3)
        assert 0.04 < res.s_opt < 0.3
