"""Credible intervals with the discrete-case bias correction, posterior
spread diagnostics against their Gaussian limits, the partition likelihood
with its stable-index MLE, and the prior law of the cluster count."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import special as sp

from nrmi_lab._validation import (
    as_sample_array,
    check_level_pair,
    check_open_unit,
    check_positive_int,
    check_rng,
)
from nrmi_lab.core_measures import Functional, Partition, TrueDistribution, partition_of
from nrmi_lab.crm_sampler import TruncationPolicy, posterior_functional_draws
from nrmi_lab.levy_intensities import IntensitySpec, laplace_exponent
from nrmi_lab.posterior_engine import Region, _trapezoid_log_weights, _xi_rows
from nrmi_lab.posterior_engine import build_latent_density

__all__ = [
    "CredibleInterval",
    "bias_term",
    "credible_interval",
    "bvm_variance_check",
    "eppf_loglik",
    "mle_sigma",
    "ncluster_pmf",
]


@dataclass(frozen=True)
class CredibleInterval:
    """A two-sided posterior interval at levels (alpha, beta), possibly
    shifted by the discrete-case bias term."""

    lo: float
    hi: float
    alpha: float
    beta: float
    corrected: bool
    bias: float

    def __post_init__(self):
        check_level_pair(self.alpha, self.beta)
        if not self.lo <= self.hi:
            raise ValueError("need lo <= hi")

    def covers(self, value) -> bool:
        return bool(self.lo <= value <= self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


def bias_term(sigma, n_pi, n, Hf, Ptilde_f) -> float:
    """The first-order mismatch between the posterior centering and the
    empirical measure: (sigma * n_pi / n) * (Hf - Ptilde_f)."""
    n = check_positive_int(n, "n")
    n_pi = check_positive_int(n_pi, "n_pi")
    if n_pi > n:
        raise ValueError("n_pi cannot exceed n")
    sigma = float(sigma)
    if not 0.0 <= sigma < 1.0:
        raise ValueError("sigma must lie in [0, 1)")
    return sigma * n_pi / n * (float(Hf) - float(Ptilde_f))


def credible_interval(draws, alpha=0.025, beta=0.975, *, correction=None) -> CredibleInterval:
    """Equal-tail interval from posterior functional draws.

    Quantiles use linear interpolation on the sorted sample (the numpy
    default), so results are reproducible bit for bit. ``correction`` takes
    the ``bias_term`` arguments as a tuple; both endpoints then shift down by
    that bias.
    """
    draws = as_sample_array(draws, "draws")
    if draws.size < 100:
        raise ValueError("insufficient draws")
    alpha, beta = check_level_pair(alpha, beta)
    bias = bias_term(*correction) if correction is not None else 0.0
    q_lo, q_hi = np.quantile(draws, [alpha, beta])
    return CredibleInterval(lo=float(q_lo - bias), hi=float(q_hi - bias),
                            alpha=alpha, beta=beta,
                            corrected=correction is not None, bias=float(bias))


# ---------------------------------------------------------------------------
# posterior-spread diagnostic
# ---------------------------------------------------------------------------


def _functional_mean_var(dist: TrueDistribution, f) -> Tuple[float, float]:
    if isinstance(f, Functional) and f.kind == "indicator":
        m = dist.true_mean(f)
        return m, m * (1.0 - m)
    if dist.kind == "finite":
        vals = np.asarray(f(dist.values), dtype=float)
        m = float(np.sum(dist.probs * vals))
        return m, float(np.sum(dist.probs * vals ** 2) - m * m)
    gen = np.random.default_rng(0xB7A)
    v = np.asarray(f(dist.sample(gen, 1 << 16)), dtype=float)
    return float(v.mean()), float(v.var())


def bvm_variance_check(spec: IntensitySpec, true_dist: TrueDistribution, f,
                       n, n_draws, rng, *, policy: Optional[TruncationPolicy] = None):
    """Compares n times the posterior variance of Pf on a fresh size-n sample
    with its distributional limit.

    The limit is Var_P0(f) when the truth is discrete; for a continuous truth
    it picks up the base-measure bridge and the centering drift,
    (1-sigma) Var_P0 f + sigma (1-sigma) Var_H f + sigma (P0 f - H f)^2.
    Returns (empirical, theoretical).
    """
    gen = check_rng(rng)
    n = check_positive_int(n, "n")
    n_draws = check_positive_int(n_draws, "n_draws")
    data = true_dist.sample(gen, n)
    part = partition_of(data)
    if policy is None:
        policy = TruncationPolicy.for_sample_size(n)
    draws = posterior_functional_draws(spec, part, f, policy, gen, n_draws)
    empirical = n * float(np.var(draws, ddof=1))

    p0f, var0 = _functional_mean_var(true_dist, f)
    if true_dist.kind != "continuous":
        theoretical = var0
    else:
        if spec.family != "nggp":
            raise ValueError("the continuous-truth limit is specific to the "
                             "generalized gamma family")
        s = spec.sigma
        hf, varh = _functional_mean_var(spec.base, f)
        theoretical = (1.0 - s) * var0 + s * (1.0 - s) * varh + s * (p0f - hf) ** 2
    return empirical, theoretical


# ---------------------------------------------------------------------------
# partition likelihood and the stable-index MLE
# ---------------------------------------------------------------------------


def eppf_loglik(sigma, partition: Partition, a, theta) -> float:
    """Log-probability of the observed block sizes under the generalized
    gamma prior: n_pi * log(a) - log Gamma(n) plus the log of the latent
    normalizing integral, which already carries the ascending factorials.

    A single observation has probability one, fixing the constant.
    """
    sigma = check_open_unit(sigma, "sigma")
    spec = IntensitySpec.nggp(a=a, sigma=sigma, theta=theta, base="std_normal")
    dens = build_latent_density(spec, partition, check_assumptions=False)
    return (partition.n_clusters * math.log(spec.a)
            - float(sp.gammaln(partition.n))
            + dens.log_norm_const)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_SIGMA_LO, _SIGMA_HI = 1e-4, 1.0 - 1e-4


def mle_sigma(partition: Partition, a, theta) -> float:
    """Maximizer of ``eppf_loglik`` in sigma by golden-section search on
    [1e-4, 1 - 1e-4] to width 1e-6; warns when the optimum sits on a
    boundary of the search interval."""
    if partition.n < 2:
        raise ValueError("need at least two observations")

    def neg(s):
        return -eppf_loglik(s, partition, a, theta)

    lo, hi = _SIGMA_LO, _SIGMA_HI
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = neg(c), neg(d)
    while hi - lo > 1e-6:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = neg(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = neg(d)
    est = 0.5 * (lo + hi)
    if est - _SIGMA_LO < 5e-6 or _SIGMA_HI - est < 5e-6:
        warnings.warn("sigma estimate sits on the search boundary")
    return float(est)


# ---------------------------------------------------------------------------
# prior distribution of the number of clusters
# ---------------------------------------------------------------------------


def _compositions(n, k):
    """Ordered positive integer k-tuples summing to n."""
    for cuts in itertools.combinations(range(1, n), k - 1):
        edges = (0,) + cuts + (n,)
        yield tuple(edges[i + 1] - edges[i] for i in range(k))


def ncluster_pmf(spec: IntensitySpec, n, *, normalize=True):
    """Prior probability of seeing k distinct values among n draws,
    k = 1..n, by enumerating block-size compositions under the latent-scale
    integral; capped at n = 8 where the enumeration stays trivial.

    The raw (unnormalized) values already sum to one when the intensity's
    bookkeeping is consistent — the normalization step only sweeps up
    quadrature dust, and can be disabled to test exactly that.
    """
    n = check_positive_int(n, "n")
    if n > 8:
        raise ValueError("enumeration cap")

    full = Region.full()

    def log_weights(t):
        u = np.exp(t)
        with np.errstate(divide="ignore"):
            log_xi = np.log(_xi_rows(spec, full, u, n))  # (n, t)
        base = n * t - laplace_exponent(spec, u) + math.log(n)
        out = np.full((n, t.size), -np.inf)
        for k in range(1, n + 1):
            terms = [
                sum(log_xi[m - 1] for m in comp)
                - sum(sp.gammaln(m + 1) for m in comp)
                for comp in _compositions(n, k)
            ]
            out[k - 1] = (sp.logsumexp(np.stack(terms), axis=0)
                          + base - sp.gammaln(k + 1))
        return out

    coarse = np.linspace(-60.0, 700.0, 1522)
    vals = log_weights(coarse)
    top = float(np.max(vals))
    keep = np.where(np.max(vals, axis=0) >= top - 45.0)[0]
    step = coarse[1] - coarse[0]
    t_lo = max(coarse[keep[0]] - step, -65.0)
    t_hi = min(coarse[keep[-1]] + step, 700.0)
    grid = np.linspace(t_lo, t_hi, 4001)
    logs = log_weights(grid) + _trapezoid_log_weights(grid.size, (t_hi - t_lo) / 4000)
    pmf = np.exp(sp.logsumexp(logs, axis=1))
    return pmf / pmf.sum() if normalize else pmf
