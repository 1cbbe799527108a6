import numpy as np
import pytest

from bdmf import (
    DistN,
    EmpiricalMeasure,
    empirical_to_dist,
    first_moment,
    lipschitz_integral,
    w1_dist,
    w1_oracle,
)
from bdmf.measure import TruncationError, delta, geometric, poisson, uniform


class TestFirstMoment:
    def test_point_masses(self):
        assert first_moment(delta(0)) == 0.0
        assert first_moment(delta(5)) == 5.0

    def test_uniform(self):
        assert first_moment(uniform(2)) == pytest.approx(1.0, abs=1e-15)


class TestW1:
    def test_identity(self):
        assert w1_dist(delta(0), delta(0)) == 0.0

    def test_point_masses(self):
        assert w1_dist(delta(0, 3), delta(3)) == 3.0

    def test_uniform_vs_center(self):
        # brute-force transport: one third moves from 0 and one third from 2
        assert w1_dist(uniform(2), delta(1, 2)) == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert w1_oracle(uniform(2), delta(1, 2)) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_identical_geometric(self):
        g = geometric(0.5, 16)
        assert w1_oracle(g, g) == 0.0

    def test_metric_properties_random(self):
        gen = np.random.default_rng(7)
        for _ in range(60):
            u = DistN(gen.random(9))
            v = DistN(gen.random(9))
            w = DistN(gen.random(9))
            duv = w1_dist(u, v)
            assert duv == pytest.approx(w1_dist(v, u), abs=1e-12)
            assert duv >= 0.0
            assert duv <= w1_dist(u, w) + w1_dist(w, v) + 1e-12
        assert w1_dist(u, u) <= 1e-12

    def test_dominates_mean_gap(self):
        gen = np.random.default_rng(11)
        for _ in range(60):
            u = DistN(gen.random(12))
            v = DistN(gen.random(12))
            assert w1_dist(u, v) >= abs(first_moment(u) - first_moment(v)) - 1e-12

    def test_unit_right_shift(self):
        gen = np.random.default_rng(13)
        m = gen.random(10)
        u = DistN(np.concatenate([m, [0.0]]))
        v = DistN(np.concatenate([[0.0], m]))
        assert w1_dist(u, v) == pytest.approx(1.0, abs=1e-12)

    def test_oracle_matches_cdf_form(self):
        gen = np.random.default_rng(17)
        for _ in range(200):
            K = int(gen.integers(1, 17))
            u = DistN(gen.random(K + 1))
            v = DistN(gen.random(K + 1))
            assert abs(w1_dist(u, v) - w1_oracle(u, v)) <= 1e-9

    def test_oracle_size_limit(self):
        big = DistN(np.ones(80))
        with pytest.raises(ValueError):
            w1_oracle(big, big)

    def test_different_truncations_padded(self):
        assert w1_dist(delta(0, 2), delta(0, 9)) == 0.0


class TestEmpirical:
    def test_two_atoms(self):
        e = EmpiricalMeasure(counts={0: 1, 2: 1}, total=2)
        assert np.allclose(empirical_to_dist(e, 4).mass, [0.5, 0, 0.5, 0, 0])

    def test_single_atom(self):
        e = EmpiricalMeasure.from_values([1, 1, 1])
        assert np.allclose(empirical_to_dist(e, 1).mass, [0.0, 1.0])

    def test_mixed(self):
        e = EmpiricalMeasure(counts={0: 2, 1: 1, 3: 1}, total=4)
        assert np.allclose(empirical_to_dist(e, 3).mass, [0.5, 0.25, 0, 0.25])

    def test_truncation_violation(self):
        e = EmpiricalMeasure.from_values([0, 7])
        with pytest.raises(TruncationError):
            empirical_to_dist(e, 4)

    def test_counts_must_sum(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(counts={0: 1}, total=2)


class TestLipschitzIntegral:
    def test_normalization(self):
        gen = np.random.default_rng(5)
        u = DistN(gen.random(8))
        assert lipschitz_integral(u, lambda k: 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_identity_map(self):
        assert lipschitz_integral(delta(2), lambda k: k) == 2.0

    def test_capped_map(self):
        val = lipschitz_integral(uniform(3), lambda k: min(k, 2))
        assert val == pytest.approx(1.25, abs=1e-12)


class TestDistN:
    def test_normalizes_raw_weights(self):
        u = DistN(np.array([2.0, 2.0]))
        assert u.mass.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            DistN(np.array([0.5, -0.5, 1.0]))

    def test_truncated_respects_budget(self):
        u = geometric(0.5, 40)
        with pytest.raises(TruncationError):
            u.truncated(2)
        v = u.truncated(39)
        assert v.K == 39

    def test_quantile_inverse_cdf(self):
        u = DistN(np.array([0.25, 0.5, 0.25]))
        qs = u.quantile(np.array([0.0, 0.2, 0.3, 0.7, 0.9]))
        assert qs.tolist() == [0, 0, 1, 1, 2]

    def test_poisson_tail_guard(self):
        with pytest.raises(TruncationError):
            poisson(2.0, 12)
        p = poisson(2.0, 30)
        assert first_moment(p) == pytest.approx(2.0, abs=1e-9)

    def test_csv_round_trip(self):
        u = DistN(np.array([0.125, 0.5, 0.375]))
        v = DistN.from_csv(u.to_csv())
        assert np.array_equal(u.mass, v.mass)

    def test_json_round_trip(self):
        u = geometric(0.3, 12)
        v = DistN.from_json(u.to_json())
        assert np.allclose(u.mass, v.mass, atol=1e-15)

    def test_mass_is_frozen(self):
        u = delta(1, 4)
        with pytest.raises(ValueError):
            u.mass[0] = 0.5
