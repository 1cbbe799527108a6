import numpy as np
import pytest

from bdmf import (
    ExperimentResult,
    chaos_experiment,
    empirical_convergence,
    fit_decay_rate,
    lyapunov_audit,
    mm_inf_model,
    power_model,
    linear_attraction,
    stationary_comparison,
)
from bdmf.analysis import chaos_sweep, _w1_counts_vs_cdf
from bdmf.measure import delta, first_moment, poisson, w1_dist


class TestFitDecay:
    def test_exact_exponential(self):
        t = np.linspace(0, 3, 13)
        res = ExperimentResult("c", t, np.exp(-2.0 * t), np.zeros(13))
        rate, r2 = fit_decay_rate(res)
        assert rate == pytest.approx(2.0, abs=1e-12)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_constant_values(self):
        t = np.linspace(0, 3, 7)
        res = ExperimentResult("c", t, np.full(7, 0.7), np.zeros(7))
        rate, r2 = fit_decay_rate(res)
        assert rate == pytest.approx(0.0, abs=1e-12)

    def test_noisy_exponential_within_five_percent(self):
        gen = np.random.default_rng(21)
        t = np.linspace(0, 2, 41)
        lam = 1.7
        vals = np.exp(-lam * t) * (1.0 + 0.01 * gen.standard_normal(41))
        res = ExperimentResult("c", t, vals, np.zeros(41))
        rate, _ = fit_decay_rate(res)
        assert abs(rate - lam) / lam < 0.05

    def test_window_and_positivity(self):
        t = np.linspace(0, 2, 5)
        res = ExperimentResult("c", t, np.array([1.0, 0.5, 0.0, 0.1, 0.1]), np.zeros(5))
        with pytest.raises(ValueError):
            fit_decay_rate(res)
        rate, _ = fit_decay_rate(res, window=(0.0, 0.5))
        assert rate > 0


class TestLyapunov:
    def test_mm_inf_equality(self, mm_inf_plain):
        # b=1, d=2k without interaction: LV = N - 2V exactly, margin 0
        audit = lyapunov_audit(mm_inf_plain, 10, 2000, seed=1)
        assert audit.violations == 0
        assert abs(audit.worst_margin) <= 1e-12

    def test_example_model_no_violations(self, example_21):
        audit = lyapunov_audit(example_21, 10, 2000, seed=2)
        assert audit.violations == 0

    def test_zero_state_margin(self, mm_inf_attracting):
        # LV(0) = N b0 exactly: the drift bound is tight at the origin
        audit = lyapunov_audit(mm_inf_attracting, 5, 1, seed=3, coord_max=0)
        assert audit.worst_margin == pytest.approx(0.0, abs=1e-12)

    def test_forced_kappa_violations(self, mm_inf_plain):
        audit = lyapunov_audit(mm_inf_plain, 4, 500, seed=4, kappa=10.0)
        assert audit.violations > 0

    def test_quadratic_rejected(self, quadratic_linear):
        with pytest.raises(ValueError):
            lyapunov_audit(quadratic_linear, 4, 10, seed=5)


class TestChaosSweep:
    def test_collapse_without_interaction(self, mm_inf_plain):
        res = chaos_experiment(mm_inf_plain, delta(1, K=8), [4, 8], 1.0,
                               np.linspace(0, 1, 5), 30, seed=6)
        assert res.values.max() == 0.0
        assert res.fit is None

    def test_error_decreases_and_w1_slope(self, mm_inf_attracting):
        chaos, emp = chaos_sweep(mm_inf_attracting, delta(2, K=12), [8, 64], 2.0,
                                 np.linspace(0, 2, 7), 400, seed=7)
        assert emp.values[1] < emp.values[0]
        for N in (8, 64):
            for eps in ("0.1", "0.2"):
                assert emp.meta["deviation"][N][eps]["worst_markov_gap"] <= 0.0

    def test_quadratic_rejected(self, quadratic_linear):
        with pytest.raises(ValueError):
            chaos_experiment(quadratic_linear, delta(1), [4], 1.0,
                             np.array([0.0, 1.0]), 5, seed=8)

    def test_noncontractive_rejected(self):
        m = mm_inf_model(1.0, 1.0, interaction=linear_attraction(1.0))  # kappa < 0
        with pytest.raises(ValueError):
            chaos_experiment(m, delta(1), [4], 1.0, np.array([0.0, 1.0]), 5, seed=9)


class TestW1Counts:
    def test_against_w1_dist(self):
        gen = np.random.default_rng(31)
        for _ in range(40):
            x = gen.integers(0, 10, size=16)
            u = poisson(2.0, 20, tail_tol=1e-4)
            counts = np.bincount(x)
            from bdmf.measure import DistN
            emp = DistN(np.bincount(x, minlength=21).astype(np.float64))
            assert _w1_counts_vs_cdf(counts, 16, np.cumsum(u.mass)) == pytest.approx(
                w1_dist(emp, u), abs=1e-12)


class TestStationary:
    def test_linear_case_converges(self, mm_inf_plain):
        res = stationary_comparison(mm_inf_plain, 1, 12.0, 40, seed=10,
                                    spacing=2.0, n_replicas=24)
        # Poisson(1/2) reference; single-coordinate empirical measure has
        # W1 ~ E|X - Y| scale, but the average must be far below the
        # shifted-control distance
        assert res.meta["mean_w1"] < 0.9
        assert not res.meta["burnin_warning"]

    def test_negative_control_shifted_reference(self, mm_inf_plain):
        from bdmf.meanfield import fixed_point
        from bdmf.measure import DistN
        u_inf = fixed_point(mm_inf_plain, delta(0, K=20))
        shifted = DistN(np.concatenate([np.zeros(3), u_inf.mass]))
        assert w1_dist(u_inf, shifted) == pytest.approx(3.0, abs=1e-9)
        res = stationary_comparison(mm_inf_plain, 6, 12.0, 20, seed=11,
                                    spacing=2.0, n_replicas=16)
        # triangle inequality: any configuration this close to u_inf stays
        # at least 3 - mean_w1 away from the shifted reference
        assert res.meta["mean_w1"] < 1.0
