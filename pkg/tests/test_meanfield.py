import numpy as np
import pytest

from bdmf import (
    NonlinearFlow,
    QuadraticPairwise,
    exp_moment_certificate,
    first_moment,
    fixed_point,
    integrate_flow,
    linear_attraction,
    master_rhs,
    mm_inf_model,
    power_model,
    simulate_nonlinear,
    verify_certificate,
    w1_dist,
)
from bdmf.meanfield import linear_oracle, mean_bound
from bdmf.measure import DistN, delta, poisson


def tv(u, v):
    K = max(u.K, v.K)
    return 0.5 * np.abs(u.padded(K).mass - v.padded(K).mass).sum()


class TestMasterRhs:
    def test_point_mass_at_origin(self, mm_inf_attracting):
        rhs = master_rhs(mm_inf_attracting, delta(0, 10))
        b0 = mm_inf_attracting.b0
        assert rhs[0] == pytest.approx(-b0, abs=1e-14)
        assert rhs[1] == pytest.approx(b0, abs=1e-14)
        assert np.abs(rhs[2:]).max() == 0.0

    def test_conservation(self, mm_inf_attracting):
        gen = np.random.default_rng(1)
        for _ in range(20):
            u = DistN(gen.random(15))
            assert abs(master_rhs(mm_inf_attracting, u).sum()) <= 1e-14

    def test_poisson_is_stationary_without_interaction(self, mm_inf_plain):
        # b=1, d=2k: the stationary law is Poisson(1/2)
        u = poisson(0.5, 30, tail_tol=1e-6)
        assert np.abs(master_rhs(mm_inf_plain, u)).max() < 1e-10

    def test_quadratic_rejected(self, quadratic_linear):
        with pytest.raises(ValueError):
            master_rhs(quadratic_linear, delta(0, 5))


class TestIntegrateFlow:
    def test_linear_case_matches_expm(self, mm_inf_plain):
        u0 = delta(0, K=30)
        flow = integrate_flow(mm_inf_plain, u0, 5.0, grid=np.linspace(0, 5, 11))
        for t in (1.0, 2.5, 5.0):
            ref = linear_oracle(mm_inf_plain, u0, t)
            assert tv(flow.dist_at(t), ref) <= 1e-8

    def test_fixed_point_is_flow_invariant(self, mm_inf_attracting):
        u_inf = fixed_point(mm_inf_attracting, delta(0, K=30))
        flow = integrate_flow(mm_inf_attracting, u_inf, 2.0, grid=np.linspace(0, 2, 5))
        assert tv(flow.dists[-1], u_inf) <= 1e-8

    def test_mean_obeys_drift_inequality(self, mm_inf_attracting):
        # d||u||/dt <= -(lambda - 2 alpha) ||u|| + b0 along the flow
        flow = integrate_flow(mm_inf_attracting, delta(4, K=24), 3.0,
                              grid=np.linspace(0, 3, 61))
        kappa, b0 = 3.0, 3.0
        dt = np.diff(flow.times)
        dm = np.diff(flow.means)
        lhs = dm / dt
        rhs = -kappa * np.minimum(flow.means[:-1], flow.means[1:]) + b0
        assert (lhs <= rhs + 1e-6).all()

    def test_means_match_first_moments(self, mm_inf_attracting):
        flow = integrate_flow(mm_inf_attracting, delta(1, K=20), 1.0)
        for u, m in zip(flow.dists, flow.means):
            assert first_moment(u) == pytest.approx(m, abs=1e-12)

    def test_cap_doubles_for_heavy_flow(self, mm_inf_plain):
        # mean 0.5 but started at 25: the initial cap must grow beyond 4*mean
        flow = integrate_flow(mm_inf_plain, delta(25, K=25), 1.0)
        assert flow.K >= 50
        assert flow.cap_leak <= 1e-10

    def test_flow_contraction_rate(self):
        # b=k, d=6k with unit attraction: kappa = 5 - 2 = 3
        model = power_model(1.0, 6.0, 1.0, interaction=linear_attraction(1.0))
        grid = np.linspace(0, 1.5, 16)
        fu = integrate_flow(model, delta(3, K=24), 1.5, grid=grid)
        fv = integrate_flow(model, delta(1, K=24), 1.5, grid=grid)
        w0 = w1_dist(fu.dists[0], fv.dists[0])
        assert w0 == pytest.approx(2.0)
        for j, t in enumerate(grid):
            w = w1_dist(fu.dists[j], fv.dists[j])
            assert w <= np.exp(-3.0 * t) * w0 * (1 + 1e-3)


class TestFixedPoint:
    def test_linear_case_poisson(self, mm_inf_plain):
        u_inf = fixed_point(mm_inf_plain, delta(0, K=25))
        assert tv(u_inf, poisson(0.5, u_inf.K, tail_tol=1e-6)) < 1e-10

    def test_mean_neutral_attraction(self, mm_inf_attracting):
        u_inf = fixed_point(mm_inf_attracting, delta(0, K=30))
        assert first_moment(u_inf) == pytest.approx(0.6, abs=1e-8)

    def test_mean_bound_from_below_start(self, mm_inf_attracting):
        u_inf = fixed_point(mm_inf_attracting, delta(0, K=30))
        assert first_moment(u_inf) <= mean_bound(mm_inf_attracting, delta(0, K=30), 3.0)

    def test_w1_to_fixed_point_decreases_along_flow(self, mm_inf_attracting):
        u_inf = fixed_point(mm_inf_attracting, delta(0, K=30))
        flow = integrate_flow(mm_inf_attracting, delta(3, K=30), 2.0,
                              grid=np.linspace(0, 2, 9))
        dists = [w1_dist(u, u_inf) for u in flow.dists]
        assert all(b <= a + 1e-9 for a, b in zip(dists, dists[1:]))


class TestMomentCertificate:
    def test_mm_inf_beta_formula(self, mm_inf_attracting):
        # beta(delta) = q e^{-delta} - p, infimum at x = 1
        cert = exp_moment_certificate(mm_inf_attracting, delta(0, K=10), 0.5)
        assert cert.beta_delta == pytest.approx(5.0 * np.exp(-0.5) - 3.0, abs=1e-12)
        assert not cert.boundary_minimum

    def test_no_interaction_reduction(self, mm_inf_plain):
        # alpha = 0: K1 = 0 and the bound is the initial moment + b0/beta
        cert = exp_moment_certificate(mm_inf_plain, delta(0, K=10), 0.5)
        assert cert.K1 == 0.0
        assert cert.bound == pytest.approx(1.0 + 1.0 / cert.beta_delta, abs=1e-12)

    def test_delta_zero_initial_moment(self, mm_inf_plain):
        cert = exp_moment_certificate(mm_inf_plain, delta(0, K=10), 0.5)
        assert cert.bound - 1.0 / cert.beta_delta == pytest.approx(1.0, abs=1e-12)

    def test_bound_holds_along_flow(self):
        # b=k, d=6k with unit attraction: b0 = 0, beta(0.5) ~ 2.64, K1 = ||u0||
        model = power_model(1.0, 6.0, 1.0, interaction=linear_attraction(1.0))
        u0 = delta(1, K=24)
        cert = exp_moment_certificate(model, u0, 0.5)
        assert cert.applicable
        assert cert.bound == pytest.approx(np.exp(0.5), abs=1e-12)
        flow = integrate_flow(model, u0, 3.0, grid=np.linspace(0, 3, 31))
        ok, worst = verify_certificate(cert, flow)
        assert ok, f"worst excess {worst}"

    def test_inapplicable_flagged(self):
        model = power_model(1.0, 6.0, 1.0, interaction=linear_attraction(1.0))
        cert = exp_moment_certificate(model, delta(3, K=10), 0.5)
        assert not cert.applicable
        with pytest.raises(ValueError):
            verify_certificate(cert, None)


class TestSimulateNonlinear:
    def test_linear_case_marginal(self, mm_inf_plain):
        u0 = delta(0, K=16)
        flow = integrate_flow(mm_inf_plain, u0, 2.0, grid=np.linspace(0, 2, 41))
        samples = simulate_nonlinear(mm_inf_plain, flow, 3000, np.array([0.0, 1.0, 2.0]),
                                     seed=12)
        ref = linear_oracle(mm_inf_plain, u0, 2.0)
        assert tv(samples.marginal(2), ref) < 0.05

    def test_mean_consistency_with_flow(self, mm_inf_attracting):
        grid = np.linspace(0.0, 3.0, 7)
        flow = integrate_flow(mm_inf_attracting, delta(2, K=20), 3.0,
                              grid=np.linspace(0, 3, 61))
        samples = simulate_nonlinear(mm_inf_attracting, flow, 4000, grid, seed=13)
        means = samples.mean_curve()
        ses = samples.se_curve()
        for j, t in enumerate(grid):
            ref = flow.mean_at(t)
            assert abs(means[j] - ref) <= 3.5 * max(ses[j], 1e-6)

    def test_constant_flow_matches_homogeneous_chain(self, mm_inf_attracting):
        # a frozen mean curve turns the driven chain into a homogeneous one
        u = fixed_point(mm_inf_attracting, delta(0, K=30))
        times = np.linspace(0.0, 2.0, 5)
        flow = NonlinearFlow(times=times, dists=tuple([u] * 5),
                             means=np.full(5, first_moment(u)))
        samples = simulate_nonlinear(mm_inf_attracting, flow, 3000,
                                     np.array([0.0, 2.0]), seed=14)
        assert tv(samples.marginal(1), u) < 0.05

    def test_grid_beyond_flow_rejected(self, mm_inf_attracting):
        flow = integrate_flow(mm_inf_attracting, delta(0, K=12), 1.0)
        with pytest.raises(ValueError):
            simulate_nonlinear(mm_inf_attracting, flow, 10, np.array([0.0, 2.0]), seed=1)
