import itertools
import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special as sp

from nrmi_lab._validation import NumericalError
from nrmi_lab.core_measures import Functional, Partition, partition_of, true_distribution_registry
from nrmi_lab.levy_intensities import IntensitySpec, log_tau
from nrmi_lab.posterior_engine import (
    LatentDensity,
    Region,
    build_latent_density,
    consistency_diagnostic,
    posterior_mean_nggp,
    posterior_mixed_moment,
    posterior_moment,
    prior_moment,
    sample_latent,
    v_derivative,
)


def nggp(a=1.0, sigma=0.5, theta=1.0, base="std_normal"):
    return IntensitySpec.nggp(a, sigma, theta, base)


def two_cell_eg(a=1.0, b1=1.0, b2=2.0):
    """Extended-gamma with rate b1 on (-inf, 0) and b2 on [0, inf)."""
    return IntensitySpec.extended_gamma(a, (0.0,), (b1, b2))


# ---------------------------------------------------------------------------
# set descriptors
# ---------------------------------------------------------------------------


class TestRegion:
    def test_interval_validation(self):
        with pytest.raises(ValueError):
            Region.interval(2.0, 2.0)
        with pytest.raises(ValueError, match="non-overlapping"):
            Region(intervals=((0.0, 2.0), (1.0, 3.0)))
        with pytest.raises(ValueError, match="outside"):
            Region(intervals=((0.0, 2.0),), points=(1.0,))

    def test_touching_intervals_allowed(self):
        r = Region.union_of_intervals([(0.0, 1.0), (1.0, 2.0)])
        assert r.contains(1.0) and r.contains(0.0) and not r.contains(2.0)

    def test_membership_half_open(self):
        r = Region.interval(1.0, 3.0)
        assert list(r.contains(np.array([0.9, 1.0, 2.9, 3.0]))) == [False, True, True, False]

    def test_points_membership(self):
        r = Region.atoms([1.0, 4.0])
        assert r.contains(1.0) and not r.contains(2.0)

    def test_overlap_detection(self):
        assert Region.interval(0, 2).overlaps(Region.interval(1, 3))
        assert not Region.interval(0, 1).overlaps(Region.interval(1, 2))
        assert Region.interval(0, 2).overlaps(Region.atoms([1.0]))
        assert not Region.interval(0, 2).overlaps(Region.atoms([2.0]))
        assert Region.atoms([5.0]).overlaps(Region.atoms([5.0, 6.0]))

    def test_complement_roundtrip(self):
        r = Region.union_of_intervals([(0.0, 1.0), (2.0, 3.0)])
        c = r.complement()
        x = np.linspace(-1, 4, 41)
        assert np.all(r.contains(x) ^ c.contains(x))
        with pytest.raises(ValueError):
            Region.atoms([1.0]).complement()

    def test_mass_under_finite_law(self):
        p1 = true_distribution_registry()["P1"]
        assert Region.interval(2, np.inf).mass_under(p1) == pytest.approx(0.8)
        assert Region.atoms([4.0]).mass_under(p1) == pytest.approx(0.3)
        assert Region.atoms([2.5]).mass_under(p1) == 0.0

    def test_mass_under_continuous_law(self):
        h = true_distribution_registry()["STD_NORMAL"]
        assert Region.atoms([0.0]).mass_under(h) == 0.0
        got = Region.union_of_intervals([(-1.0, 0.0), (1.0, 2.0)]).mass_under(h)
        want = (sp.ndtr(0) - sp.ndtr(-1)) + (sp.ndtr(2) - sp.ndtr(1))
        assert got == pytest.approx(want, rel=1e-12)

    def test_cell_masses_split(self):
        spec = two_cell_eg()
        masses, rows = Region.interval(-1.0, 1.0).cell_masses(spec)
        assert masses[0] == pytest.approx(sp.ndtr(0) - sp.ndtr(-1), rel=1e-12)
        assert masses[1] == pytest.approx(sp.ndtr(1) - sp.ndtr(0), rel=1e-12)
        assert rows.shape == (1, 2)
        full, _ = Region.full().cell_masses(spec)
        assert full.sum() == pytest.approx(spec.a, rel=1e-12)

    @given(st.floats(-3, 3), st.floats(0.1, 3))
    @settings(max_examples=40, deadline=None)
    def test_overlap_symmetry(self, lo, width):
        a = Region.interval(lo, lo + width)
        b = Region.interval(lo + width / 2, lo + 2 * width)
        assert a.overlaps(b) == b.overlaps(a)


# ---------------------------------------------------------------------------
# the latent density
# ---------------------------------------------------------------------------


def _dense_log_norm(spec, partition, t_lo, t_hi, nodes=1_000_000):
    """Independent dense-grid normalizer: raw trapezoid on the log scale."""
    t = np.linspace(t_lo, t_hi, nodes)
    u = np.exp(t)
    logf = partition.n * t - _psi_direct(spec, u)
    for val, mult in zip(partition.distinct_values, partition.multiplicities):
        logf = logf + log_tau(spec, int(mult), u, float(val))
    c = np.exp(logf - logf.max())
    integral = np.trapezoid(c, t)
    return math.log(integral) + logf.max()


def _psi_direct(spec, u):
    if spec.family == "nggp":
        s, th = spec.sigma, spec.theta
        return spec.a / s * ((u + th) ** s - th ** s)
    if spec.family == "gdp":
        j = np.arange(1, spec.gamma_levels + 1)
        return spec.a * np.sum(np.log1p(u[:, None] / j), axis=1)
    raise NotImplementedError


class TestBuildLatentDensity:
    def test_closed_form_shape(self):
        # the log unnormalized density differs from the direct closed form by a
        # u-independent constant only
        spec = nggp(1.0, 0.5, 1.0)
        sample = [1.0] * 96 + [2.0, 3.0, 4.0, 5.0]
        part = partition_of(sample)
        dens = build_latent_density(spec, part)
        u = np.array([0.5, 3.0, 20.0, 300.0])
        n, k = part.n, part.n_clusters
        direct = (n - 1) * np.log(u) - (n - k * spec.sigma) * np.log(u + 1.0) \
            - 2.0 * (u + 1.0) ** 0.5
        got = dens.log_unnorm(u)
        assert np.ptp(got - direct) < 1e-10

    def test_dense_grid_normalizer_oracle(self):
        spec = nggp(1.0, 0.5, 1.0)
        part = Partition(np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
                         np.array([96, 1, 1, 1, 1]), 100)
        dens = build_latent_density(spec, part)
        t_mode = math.log(dens.mode)
        oracle = _dense_log_norm(spec, part, t_mode - 80, t_mode + 45)
        assert dens.log_norm_const == pytest.approx(oracle, abs=1e-8)

    def test_mode_is_a_stationary_point(self):
        spec = nggp(2.0, 0.3, 0.5)
        part = partition_of([1.0, 1.0, 2.0, 3.0, 3.0, 3.0])
        dens = build_latent_density(spec, part)
        h = 1e-10

        def logft(u):
            return dens.log_unnorm(np.array([u]))[0] + math.log(u)

        assert logft(dens.mode * (1 + h)) < logft(dens.mode) + 1e-12
        assert logft(dens.mode * (1 - h)) < logft(dens.mode) + 1e-12

    @pytest.mark.parametrize("make_spec", [
        lambda: nggp(2.0, 0.3, 0.7),
        lambda: IntensitySpec.gdp(1.3, 4),
        lambda: IntensitySpec.extended_gamma(0.7, (), (2.5,)),
    ])
    def test_single_observation_normalizer_identity(self, make_spec):
        # with one observation the normalized jump intensity integrates the
        # density to exactly 1/a, for every family with constant rate
        spec = make_spec()
        dens = build_latent_density(spec, partition_of([0.3]))
        assert dens.log_norm_const + math.log(spec.a) == pytest.approx(0.0, abs=1e-10)

    def test_quadrature_masses_sum_to_one(self):
        dens = build_latent_density(nggp(), partition_of([1.0, 1.0, 2.0]))
        nodes = dens.quadrature_nodes
        assert sum(w for _, w in nodes) == pytest.approx(1.0, abs=1e-12)
        assert all(u > 0 for u, _ in nodes)

    def test_immutable_grid(self):
        dens = build_latent_density(nggp(), partition_of([1.0]))
        with pytest.raises(ValueError):
            dens.t_grid[0] = 0.0

    def test_warns_when_ratio_bound_fails(self):
        bad = IntensitySpec.custom(1.0, lambda s: -0.5 * math.log(s) - s * s)
        with pytest.warns(UserWarning, match="monotone-ratio"):
            build_latent_density(bad, partition_of([0.5]), grid_points=129)

    def test_empty_partition_rejected(self):
        with pytest.raises(ValueError):
            build_latent_density(nggp(), Partition(np.empty(0), np.empty(0, dtype=int), 0))


# ---------------------------------------------------------------------------
# the derivative ladder
# ---------------------------------------------------------------------------


def _mp_v_oracle(psi_mp, u, k):
    """(-1)^k e^{psi} d^k/du^k e^{-psi} in 50-digit arithmetic."""
    with mpmath.workdps(50):
        d = mpmath.diff(lambda x: mpmath.e ** (-psi_mp(x)), mpmath.mpf(u), k)
        return float((-1) ** k * mpmath.e ** (psi_mp(mpmath.mpf(u))) * d)


class TestVDerivative:
    def test_order_zero(self):
        assert v_derivative(nggp(), 0, 3.0, 0.7) == 1.0

    def test_order_cap(self):
        with pytest.raises(ValueError, match="order too large"):
            v_derivative(nggp(), 13, 1.0, 1.0)

    def test_first_order_closed_form(self):
        spec = nggp(1.0, 0.5, 1.0)
        for u in (0.5, 2.0, 10.0):
            want = 0.6 * (u + 1.0) ** (-0.5)
            assert v_derivative(spec, 1, u, 0.6) == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    @pytest.mark.parametrize("u", [0.5, 2.0, 10.0])
    def test_against_high_precision_derivatives_nggp(self, k, u):
        a, s, th, mass = 1.0, 0.5, 1.0, 0.8

        def psi_mp(x):
            return mass / s * ((x + th) ** s - mpmath.mpf(th) ** s)

        got = v_derivative(nggp(a, s, th), k, u, mass)
        assert got == pytest.approx(_mp_v_oracle(psi_mp, u, k), rel=1e-4)

    @pytest.mark.parametrize("k", [1, 2, 3, 5])
    def test_against_high_precision_derivatives_gdp(self, k):
        mass, levels, u = 0.4, 3, 2.0

        def psi_mp(x):
            return mass * sum(mpmath.log1p(x / j) for j in range(1, levels + 1))

        got = v_derivative(IntensitySpec.gdp(1.0, levels), k, u, mass)
        assert got == pytest.approx(_mp_v_oracle(psi_mp, u, k), rel=1e-4)

    def test_region_restriction_extended_gamma(self):
        spec = two_cell_eg(a=1.0, b1=1.0, b2=2.0)
        region = Region.interval(0.0, np.inf)  # exactly the second cell

        def psi_mp(x):
            return mpmath.mpf("0.5") * mpmath.log1p(x / 2)

        for k in (1, 2, 3):
            got = v_derivative(spec, k, 1.5, region)
            assert got == pytest.approx(_mp_v_oracle(psi_mp, 1.5, k), rel=1e-4)

    def test_scalar_mass_is_proportional_slice(self):
        spec = two_cell_eg()
        full_scalar = v_derivative(spec, 3, 2.0, spec.a)
        full_region = v_derivative(spec, 3, 2.0, Region.full())
        assert full_scalar == pytest.approx(full_region, rel=1e-12)

    def test_monotone_in_mass(self):
        spec = nggp()
        vals = [v_derivative(spec, 4, 1.0, m) for m in (0.2, 0.5, 1.0)]
        assert vals[0] < vals[1] < vals[2]


# ---------------------------------------------------------------------------
# posterior moments: identities and a brute-force enumeration oracle
# ---------------------------------------------------------------------------


def _enumerated_moment(spec, partition, region, m, t_lo, t_hi, nodes=200_001):
    """The moment formula evaluated the slow way, as an independent oracle:
    explicit enumeration of all nonnegative (l_1..l_k) with sum <= m, on its
    own dense grid with its own normalizer."""
    t = np.linspace(t_lo, t_hi, nodes)
    u = np.exp(t)
    n = partition.n
    vals = partition.distinct_values
    mults = partition.multiplicities
    from nrmi_lab.levy_intensities import laplace_exponent

    logf = n * t - laplace_exponent(spec, u)
    for val, mult in zip(vals, mults):
        logf = logf + log_tau(spec, int(mult), u, float(val))
    base = np.exp(logf - logf.max())
    norm = np.trapezoid(base, t)

    inside = region.contains(vals)
    k = vals.size
    acc = np.zeros(u.size)
    for ls in itertools.product(range(m + 1), repeat=k):
        L = sum(ls)
        if L > m:
            continue
        if any(l > 0 and not inc for l, inc in zip(ls, inside)):
            continue
        term = np.ones(u.size)
        for val, mult, l in zip(vals, mults, ls):
            if l:
                term *= np.exp(log_tau(spec, int(mult) + l, u, float(val))
                               - log_tau(spec, int(mult), u, float(val))) / math.factorial(l)
        from nrmi_lab.posterior_engine import _v_rows, _xi_rows

        vfull = _v_rows(_xi_rows(spec, region, u, max(m, 1)))[m - L]
        acc += term * vfull / math.factorial(m - L)
    integrand = base / norm * np.exp(m * t) * acc
    integral = np.trapezoid(integrand, t)
    return math.factorial(m) * math.exp(sp.gammaln(n) - sp.gammaln(n + m)) * integral


class TestPosteriorMoment:
    def test_total_mass_first_and_second(self):
        spec = nggp(1.5, 0.4, 2.0)
        part = partition_of([1.0, 1.0, 2.0, 5.0])
        dens = build_latent_density(spec, part)
        for m in (1, 2):
            got = posterior_moment(spec, part, Region.full(), m, density=dens)
            assert got == pytest.approx(1.0, abs=1e-8)

    def test_dirichlet_limit(self):
        spec = nggp(1.0, 1e-4, 1.0)
        part = partition_of([1.0, 1.0, 2.0])
        got = posterior_moment(spec, part, Region.atoms([1.0]), 1)
        assert got == pytest.approx(0.5, abs=1e-3)

    def test_moments_decrease_in_order(self):
        spec = nggp()
        part = partition_of([1.0, 1.0, 1.0, 2.0, 3.0])
        dens = build_latent_density(spec, part)
        region = Region.atoms([1.0])
        ms = [posterior_moment(spec, part, region, m, density=dens) for m in (1, 2, 3, 4)]
        assert all(b <= a + 1e-12 for a, b in zip(ms, ms[1:]))

    def test_mean_additivity(self):
        spec = nggp(0.8, 0.6, 1.3)
        part = partition_of([0.1, 0.1, 0.5, 2.2, 2.2, 3.0])
        dens = build_latent_density(spec, part)
        left = posterior_moment(spec, part, Region.interval(0.0, 1.0), 1, density=dens)
        right = posterior_moment(spec, part, Region.interval(1.0, 3.5), 1, density=dens)
        both = posterior_moment(spec, part, Region.interval(0.0, 3.5), 1, density=dens)
        assert left + right == pytest.approx(both, abs=1e-8)

    def test_matches_closed_form_mean_weights(self):
        spec = nggp(1.0, 0.5, 1.0)
        part = partition_of([1.0, 1.0, 2.0])
        dens = build_latent_density(spec, part)
        wh, aw = posterior_mean_nggp(spec, part, density=dens)
        got = posterior_moment(spec, part, Region.atoms([1.0]), 1, density=dens)
        assert got == pytest.approx(aw[0], rel=1e-8)

    @pytest.mark.parametrize("make_spec,sample", [
        (lambda: nggp(1.0, 0.5, 1.0), [1.0, 1.0, 2.0, 3.5]),
        (lambda: IntensitySpec.gdp(1.2, 3), [0.5, 0.5, 0.5, 1.5]),
        (lambda: two_cell_eg(), [-0.5, -0.5, 0.7]),
    ])
    @pytest.mark.parametrize("m", [1, 2])
    def test_against_enumeration_oracle(self, make_spec, sample, m):
        spec = make_spec()
        part = partition_of(sample)
        dens = build_latent_density(spec, part)
        region = Region.interval(0.0, 2.0)
        got = posterior_moment(spec, part, region, m, density=dens)
        t_mode = math.log(dens.mode)
        want = _enumerated_moment(spec, part, region, m, t_mode - 50, t_mode + 60)
        assert got == pytest.approx(want, rel=1e-6)

    def test_indicator_and_pair_descriptors(self):
        spec = nggp()
        part = partition_of([1.0, 2.0, 2.0])
        dens = build_latent_density(spec, part)
        a = posterior_moment(spec, part, Functional.indicator(1.5, 2.5), 1, density=dens)
        b = posterior_moment(spec, part, (1.5, 2.5), 1, density=dens)
        c = posterior_moment(spec, part, Region.interval(1.5, 2.5), 1, density=dens)
        assert a == b == c

    def test_empty_region_gives_zero(self):
        spec = nggp()
        part = partition_of([1.0, 2.0])
        assert posterior_moment(spec, part, Region.atoms([9.9]), 1) == 0.0

    def test_order_validation(self):
        spec = nggp()
        part = partition_of([1.0])
        with pytest.raises(ValueError, match="capped"):
            posterior_moment(spec, part, Region.full(), 5)
        with pytest.raises(ValueError):
            posterior_moment(spec, part, Region.full(), 0)
        with pytest.raises(ValueError, match="descriptor"):
            posterior_moment(spec, part, "everything", 1)


class TestPosteriorMixedMoment:
    def test_rejects_overlap(self):
        spec = nggp()
        part = partition_of([1.0, 2.0])
        with pytest.raises(ValueError, match="sets not disjoint"):
            posterior_mixed_moment(spec, part,
                                   [Region.interval(0, 2), Region.interval(1, 3)], [1, 1])

    def test_single_set_reduces_to_moment(self):
        spec = nggp(1.1, 0.35, 0.9)
        part = partition_of([1.0, 1.0, 4.0])
        dens = build_latent_density(spec, part)
        r = Region.interval(0.5, 2.0)
        a = posterior_mixed_moment(spec, part, [r], [2], density=dens)
        b = posterior_moment(spec, part, r, 2, density=dens)
        assert a == pytest.approx(b, rel=1e-12)

    def test_complement_identity(self):
        # with A2 the complement of A1, E[P(A1)P(A2)] = E[P(A1)] - E[P(A1)^2]
        spec = nggp(0.9, 0.55, 1.4)
        part = partition_of([0.2, 0.2, 1.7, 2.4, 2.4, 2.4])
        dens = build_latent_density(spec, part)
        a1 = Region.interval(-np.inf, 2.0)
        a2 = Region.interval(2.0, np.inf)
        mixed = posterior_mixed_moment(spec, part, [a1, a2], [1, 1], density=dens)
        m1 = posterior_moment(spec, part, a1, 1, density=dens)
        m2 = posterior_moment(spec, part, a1, 2, density=dens)
        assert mixed == pytest.approx(m1 - m2, abs=1e-8)

    def test_three_way_total_order(self):
        spec = nggp()
        part = partition_of([1.0, 2.0, 3.0])
        sets = [Region.interval(i, i + 1) for i in range(3)]
        with pytest.raises(ValueError, match="capped"):
            posterior_mixed_moment(spec, part, sets, [2, 2, 1])
        got = posterior_mixed_moment(spec, part, sets, [1, 1, 1])
        assert 0.0 <= got <= 1.0

    def test_argument_validation(self):
        spec = nggp()
        part = partition_of([1.0])
        with pytest.raises(ValueError):
            posterior_mixed_moment(spec, part, [], [])
        with pytest.raises(ValueError):
            posterior_mixed_moment(spec, part, [Region.full()], [1, 1])


class TestPosteriorMeanNggp:
    def test_weights_sum_to_one(self):
        for sigma, theta, sample in [
            (0.5, 1.0, [1.0, 1.0, 2.0]),
            (0.25, 0.2, [1.0] * 50 + [2.0] * 30 + [7.0]),
            (0.9, 3.0, list(range(12))),
        ]:
            spec = nggp(1.3, sigma, theta)
            part = partition_of(sample)
            wh, aw = posterior_mean_nggp(spec, part)
            assert wh + sum(aw) == pytest.approx(1.0, abs=1e-8)
            assert wh > 0 and all(w > 0 for w in aw)

    def test_requires_nggp(self):
        with pytest.raises(ValueError, match="nggp"):
            posterior_mean_nggp(IntensitySpec.gdp(1.0, 2), partition_of([1.0]))

    def test_dirichlet_limit_weights(self):
        spec = nggp(1.0, 1e-4, 1.0)
        part = partition_of([1.0, 1.0, 2.0])
        wh, aw = posterior_mean_nggp(spec, part)
        assert wh == pytest.approx(0.25, abs=1e-3)
        assert aw[0] == pytest.approx(0.5, abs=1e-3)
        assert aw[1] == pytest.approx(0.25, abs=1e-3)

    def test_all_distinct_base_weight_approaches_sigma(self):
        # with every observation distinct the posterior mean tends to
        # (1-sigma) * empirical + sigma * base
        spec = nggp(1.0, 0.5, 1.0)
        part = partition_of(np.linspace(0.0, 1.0, 10_000))
        wh, aw = posterior_mean_nggp(spec, part)
        assert wh == pytest.approx(0.5, abs=0.02)

    def test_heavily_tied_base_weight_vanishes(self):
        spec = nggp(1.0, 0.5, 1.0)
        part = Partition(np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
                         np.array([2000, 2000, 2000, 3000, 1000]), 10_000)
        wh, aw = posterior_mean_nggp(spec, part)
        assert wh < 0.01
        assert sum(aw) == pytest.approx(1.0 - wh, abs=1e-8)


# ---------------------------------------------------------------------------
# latent sampling
# ---------------------------------------------------------------------------


class TestSampleLatent:
    def setup_method(self):
        self.spec = nggp(1.0, 0.5, 1.0)
        self.part = partition_of([1.0] * 4 + [2.0] * 3 + [5.0])
        self.dens = build_latent_density(self.spec, self.part)

    def test_scalar_draw(self):
        u = sample_latent(self.dens, np.random.default_rng(0))
        assert isinstance(u, float) and u > 0

    def test_deterministic_given_seed(self):
        a = sample_latent(self.dens, 123, size=50)
        b = sample_latent(self.dens, 123, size=50)
        assert np.array_equal(a, b)

    def test_kolmogorov_distance_to_quadrature_cdf(self):
        draws = sample_latent(self.dens, np.random.default_rng(7), size=100_000)
        t = np.sort(np.log(draws))
        emp = np.searchsorted(t, self.dens.t_grid, side="right") / t.size
        assert np.max(np.abs(emp - self.dens.cdf_grid)) < 0.01

    def test_concentration_around_mode(self):
        # a large sample pins the latent scale near its mode, with spread
        # given by the curvature of the log density there
        part = partition_of([1.0] * 600 + [2.0] * 400)
        dens = build_latent_density(self.spec, part)
        t_mode = math.log(dens.mode)
        eps = 1e-4

        def lg(t):
            return dens.log_unnorm(np.array([math.exp(t)]))[0] + t

        curv = (lg(t_mode + eps) - 2 * lg(t_mode) + lg(t_mode - eps)) / eps ** 2
        width = 1.0 / math.sqrt(-curv)
        draws = np.log(sample_latent(dens, np.random.default_rng(3), size=4000))
        assert abs(draws.mean() - t_mode) < 5 * width
        assert np.std(draws) == pytest.approx(width, rel=0.2)


# ---------------------------------------------------------------------------
# prior moments and the consistency diagnostic
# ---------------------------------------------------------------------------


class TestPriorMoment:
    @pytest.mark.parametrize("make_spec", [
        lambda: nggp(1.7, 0.3, 0.6),
        lambda: IntensitySpec.gdp(0.8, 2),
    ])
    def test_mean_equals_base_mass_homogeneous(self, make_spec):
        spec = make_spec()
        region = Region.interval(-0.7, 0.9)
        want = sp.ndtr(0.9) - sp.ndtr(-0.7)
        assert prior_moment(spec, region, 1) == pytest.approx(want, rel=1e-8)

    def test_mean_tilted_by_rate_table(self):
        # a location-dependent rate reweights the normalized measure, so the
        # prior mean is NOT the base mass; compare against direct quadrature
        spec = two_cell_eg(1.2, b1=1.0, b2=2.0)
        region = Region.interval(-0.7, 0.9)
        m_low = sp.ndtr(0.0) - sp.ndtr(-0.7)
        m_high = sp.ndtr(0.9) - sp.ndtr(0.0)
        with mpmath.workdps(30):
            def integrand(u):
                psi = mpmath.mpf("0.6") * (mpmath.log1p(u) + mpmath.log1p(u / 2))
                xi1 = mpmath.mpf("1.2") * (m_low / (u + 1) + m_high / (u + 2))
                return xi1 * mpmath.e ** (-psi)

            want = float(mpmath.quad(integrand, [0, 1, 10, mpmath.inf]))
        got = prior_moment(spec, region, 1)
        assert got == pytest.approx(want, rel=1e-6)
        assert got != pytest.approx(sp.ndtr(0.9) - sp.ndtr(-0.7), rel=1e-3)

    def test_total_mass_all_orders(self):
        spec = nggp(0.9, 0.4, 1.1)
        for m in (1, 2, 3):
            assert prior_moment(spec, Region.full(), m) == pytest.approx(1.0, abs=1e-8)

    def test_dirichlet_limit_second_moment(self):
        # as sigma -> 0 the prior variance matches the conjugate-family value
        # H(A)(1-H(A))/(1+a)
        spec = nggp(1.0, 1e-4, 1.0)
        h = sp.ndtr(1.0) - sp.ndtr(0.0)
        got = prior_moment(spec, Region.interval(0.0, 1.0), 2)
        assert got == pytest.approx(h * (1 - h) / 2 + h * h, abs=1e-3)

    def test_null_region(self):
        assert prior_moment(nggp(), Region.atoms([3.0]), 1) == 0.0


class TestConsistencyDiagnostic:
    def test_single_cell_is_degenerate(self):
        spec = nggp()
        part = partition_of([1.0, 2.0, 2.0])
        assert consistency_diagnostic(spec, part, []) <= 1e-10

    def test_prior_value_positive(self):
        got = consistency_diagnostic(nggp(), None, [0.0, 1.0])
        assert got > 0.01

    def test_empty_partition_matches_none(self):
        empty = Partition(np.empty(0), np.empty(0, dtype=int), 0)
        spec = nggp(1.2, 0.6, 0.8)
        a = consistency_diagnostic(spec, None, [-1.0, 1.0])
        b = consistency_diagnostic(spec, empty, [-1.0, 1.0])
        assert a == pytest.approx(b, rel=1e-12)

    def test_halves_when_sample_doubles(self):
        spec = nggp(1.0, 0.5, 1.0)
        vals = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        small = Partition(vals, np.array([200, 200, 200, 300, 100]), 1000)
        big = Partition(vals, np.array([400, 400, 400, 600, 200]), 2000)
        bounds = [1.0, 2.0, 3.0, 4.0, 5.0]
        v_small = consistency_diagnostic(spec, small, bounds)
        v_big = consistency_diagnostic(spec, big, bounds)
        assert 0.0 < v_big <= 0.6 * v_small

    def test_rejects_bad_boundaries(self):
        with pytest.raises(ValueError):
            consistency_diagnostic(nggp(), None, [1.0, 1.0])
        with pytest.raises(ValueError):
            consistency_diagnostic(nggp(), None, [np.inf])
