import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special as sp

from nrmi_lab.core_measures import (
    AtomicMeasure,
    Functional,
    Partition,
    TrueDistribution,
    integrate,
    partition_of,
    power_law_pmf,
    true_distribution_registry,
    zeta_partial,
)


class TestPartitionOf:
    def test_ties_counted(self):
        p = partition_of([1.0, 1.0, 2.0])
        np.testing.assert_array_equal(p.distinct_values, [1.0, 2.0])
        np.testing.assert_array_equal(p.multiplicities, [2, 1])
        assert p.n == 3 and p.n_clusters == 2

    def test_singleton(self):
        p = partition_of([5.0])
        np.testing.assert_array_equal(p.distinct_values, [5.0])
        assert p.n_clusters == 1

    def test_first_appearance_order(self):
        p = partition_of([3.0, 1.0, 3.0, 2.0, 1.0])
        np.testing.assert_array_equal(p.distinct_values, [3.0, 1.0, 2.0])
        np.testing.assert_array_equal(p.multiplicities, [2, 2, 1])

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError, match="empty sample"):
            partition_of([])

    @given(st.lists(st.sampled_from([1.0, 2.0, 3.5, -1.25]), min_size=1, max_size=40),
           st.randoms(use_true_random=False))
    def test_permutation_covariant(self, sample, rnd):
        shuffled = list(sample)
        rnd.shuffle(shuffled)
        a, b = partition_of(sample), partition_of(shuffled)
        assert sorted(zip(a.distinct_values, a.multiplicities)) == sorted(
            zip(b.distinct_values, b.multiplicities)
        )

    def test_invalid_partition_rejected(self):
        with pytest.raises(ValueError):
            Partition(np.array([1.0, 2.0]), np.array([2, 1]), n=4)
        with pytest.raises(ValueError):
            Partition(np.array([1.0, 1.0]), np.array([1, 1]), n=2)


class TestIntegrate:
    def test_normalized_unit(self):
        m = AtomicMeasure(np.array([0.0, 1.0]), np.array([0.4, 0.6]), normalized=True)
        assert integrate(m, Functional.of(lambda x: 1.0)) == pytest.approx(1.0)

    def test_indicator_direct_sum(self):
        m = AtomicMeasure(np.array([1.0, 2.0]), np.array([0.3, 0.7]), normalized=True)
        assert integrate(m, Functional.indicator(2.0)) == pytest.approx(0.7)

    def test_p1_indicator(self):
        m = true_distribution_registry()["P1"].as_atomic_measure()
        assert integrate(m, Functional.indicator(2.0)) == pytest.approx(0.8)

    @given(
        st.lists(st.floats(0.0, 5.0), min_size=1, max_size=20),
        st.floats(0.1, 10.0),
    )
    @settings(max_examples=50)
    def test_bounded_by_sup(self, weights, bound):
        w = np.asarray(weights)
        if w.sum() <= 0:
            return
        m = AtomicMeasure(np.arange(len(weights), dtype=float), w / w.sum(), normalized=True)
        f = Functional.of(lambda x, b=bound: b * np.cos(x))
        assert abs(integrate(m, f)) <= bound + 1e-12


class TestAtomicMeasure:
    def test_rejects_negative_weight(self):
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([0.0]), np.array([-0.5]))

    def test_rejects_duplicate_locations(self):
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([1.0, 1.0]), np.array([0.5, 0.5]))

    def test_normalized_sum_enforced(self):
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6]), normalized=True)
        m = AtomicMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6])).normalize()
        assert m.total_mass == pytest.approx(1.0)


class TestPowerLawPmf:
    def test_exponent3(self):
        assert power_law_pmf(3, 1) == pytest.approx(0.83190737, abs=1e-8)

    def test_exponent2_zeta_pi(self):
        # zeta(2) = pi^2/6 cross-check
        assert power_law_pmf(2, 2) == pytest.approx(0.25 / (np.pi**2 / 6), rel=1e-12)
        assert power_law_pmf(2, 2) == pytest.approx(0.15198178, abs=1e-8)

    def test_exponent_3_2(self):
        # frozen from the partial-summation oracle (= 1/zeta(1.5))
        assert power_law_pmf(1.5, 1) == pytest.approx(0.38279338, abs=1e-8)

    def test_non_summable_rejected(self):
        with pytest.raises(ValueError, match="non-summable"):
            power_law_pmf(1.0, 1)

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.7])
    def test_sums_to_one_with_tail_bound(self, p):
        k = np.arange(1, 200_000)
        head = power_law_pmf(p, k).sum()
        tail = sp.zeta(p, 200_000.0) / zeta_partial(p)
        assert head + tail == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("p", [1.5, 2.0, 2.5, 3.0])
    def test_partial_summation_matches_scipy(self, p):
        assert zeta_partial(p) == pytest.approx(float(sp.zeta(p, 1.0)), rel=1e-13)


class TestTrueDistributions:
    def test_registry_p0f_values(self):
        reg = true_distribution_registry()
        f = Functional.indicator(2.0)
        assert reg["P1"].true_mean(f) == pytest.approx(0.8)
        assert reg["P2"].true_mean(f) == pytest.approx(1 - 1 / zeta_partial(3.0), rel=1e-12)
        assert reg["P3"].true_mean(f) == pytest.approx(1 - 6 / np.pi**2, rel=1e-10)
        assert reg["P4"].true_mean(f) == pytest.approx(1 - 0.38279338, abs=1e-8)

    def test_exp1_interval(self):
        d = TrueDistribution.continuous("exp1")
        assert d.true_mean(Functional.indicator(0.0, 1.0)) == pytest.approx(1 - np.exp(-1))
        assert d.cdf(0.0) == pytest.approx(0.0)

    def test_power_law_sampler_matches_pmf(self):
        rng = np.random.default_rng(7)
        x = TrueDistribution.power_law(3.0).sample(rng, 200_000)
        for k in (1, 2, 3, 5):
            want = power_law_pmf(3.0, k)
            got = np.mean(x == k)
            assert got == pytest.approx(want, abs=4 * np.sqrt(want * (1 - want) / x.size))

    def test_power_law_tail_sampler_exact(self):
        # force the tail path: exponent 1.5 has ~0.3% of mass beyond the head table
        rng = np.random.default_rng(11)
        x = TrueDistribution.power_law(1.5).sample(rng, 400_000)
        frac_tail = np.mean(x > 65536)
        want = sp.zeta(1.5, 65537.0) / zeta_partial(1.5)
        assert frac_tail == pytest.approx(want, abs=4 * np.sqrt(want / x.size))
        assert np.all(x == np.floor(x)) and np.all(x >= 1)

    def test_finite_sampler(self):
        rng = np.random.default_rng(3)
        reg = true_distribution_registry()
        x = reg["P1"].sample(rng, 100_000)
        assert np.mean(x >= 2) == pytest.approx(0.8, abs=0.006)

    def test_cluster_growth_smoke(self):
        # desk-size check of the distinct-count growth for a heavy-tailed law
        rng = np.random.default_rng(5)
        d = true_distribution_registry()["P4"]
        ns = np.array([100, 1000, 10000])
        counts = [partition_of(d.sample(rng, n)).n_clusters for n in ns]
        slope = np.polyfit(np.log(ns), np.log(counts), 1)[0]
        assert 0.5 < slope < 0.85
