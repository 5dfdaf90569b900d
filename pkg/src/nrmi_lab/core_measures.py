"""Measure, sample, and partition primitives shared by every other module.

Everything in here is immutable after construction and safe to share across
worker processes; the operations are pure functions of their arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import special as sp

from nrmi_lab._validation import as_sample_array, check_positive_int

__all__ = [
    "AtomicMeasure",
    "Partition",
    "TrueDistribution",
    "Functional",
    "partition_of",
    "integrate",
    "power_law_pmf",
    "zeta_partial",
]

_POWER_HEAD_SIZE = 65536


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """A finite weighted atom list; with ``normalized=True`` it represents a
    realized random probability measure.

    Invariants enforced at construction: weights nonnegative, locations
    pairwise distinct, and (if normalized) total weight within 1e-9 of 1.
    """

    locations: np.ndarray
    weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.locations, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if loc.shape != w.shape or loc.ndim != 1:
            raise ValueError("locations and weights must be 1-D arrays of equal length")
        if np.any(w < 0):
            if np.any(w < -1e-12):
                raise ValueError("negative atom weight")
            w = np.clip(w, 0.0, None)
        if np.unique(loc).size != loc.size:
            raise ValueError("atom locations must be pairwise distinct")
        if self.normalized and abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"normalized measure has total weight {w.sum()!r}")
        loc.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, atoms, normalized=False):
        locs, ws = zip(*atoms) if atoms else ((), ())
        return cls(np.asarray(locs, dtype=float), np.asarray(ws, dtype=float), normalized)

    @property
    def atoms(self):
        return list(zip(self.locations.tolist(), self.weights.tolist()))

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def normalize(self) -> "AtomicMeasure":
        t = self.total_mass
        if t <= 0:
            raise ValueError("cannot normalize a zero measure")
        return AtomicMeasure(self.locations, self.weights / t, normalized=True)


@dataclass(frozen=True, eq=False)
class Partition:
    """Distinct observed values with multiplicities: the data summary every
    posterior formula consumes."""

    distinct_values: np.ndarray
    multiplicities: np.ndarray
    n: int

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.distinct_values, dtype=float))
        mult = np.atleast_1d(np.asarray(self.multiplicities, dtype=np.int64))
        if vals.ndim != 1 or vals.shape != mult.shape:
            raise ValueError("distinct_values and multiplicities must match in shape")
        if np.unique(vals).size != vals.size:
            raise ValueError("distinct_values must be pairwise distinct")
        if np.any(mult <= 0):
            raise ValueError("multiplicities must be positive")
        if int(mult.sum()) != int(self.n):
            raise ValueError("multiplicities must sum to n")
        vals.flags.writeable = False
        mult.flags.writeable = False
        object.__setattr__(self, "distinct_values", vals)
        object.__setattr__(self, "multiplicities", mult)
        object.__setattr__(self, "n", int(self.n))

    @property
    def n_clusters(self) -> int:
        """Number of distinct values among the n observations."""
        return int(self.distinct_values.size)


@dataclass(frozen=True)
class Functional:
    """A real functional on the sample space, applied to measures via
    ``integrate``; the indicator kind carries exact interval endpoints so true
    means can be computed in closed form."""

    kind: str  # "indicator" | "generic"
    lo: float = -np.inf
    hi: float = np.inf
    fn: Optional[Callable] = None
    bounds: Optional[Tuple[float, float]] = None  # optional square-integrability bounds

    @classmethod
    def indicator(cls, lo, hi=np.inf) -> "Functional":
        """Indicator of the half-open interval [lo, hi)."""
        lo, hi = float(lo), float(hi)
        if not lo < hi:
            raise ValueError("need lo < hi")
        return cls(kind="indicator", lo=lo, hi=hi, bounds=(0.0, 1.0))

    @classmethod
    def of(cls, fn, bounds=None) -> "Functional":
        return cls(kind="generic", fn=fn, bounds=bounds)

    def __call__(self, x):
        if self.kind == "indicator":
            x = np.asarray(x, dtype=float)
            out = ((x >= self.lo) & (x < self.hi)).astype(float)
            return out if out.ndim else float(out)
        return self.fn(x)


# ---------------------------------------------------------------------------
# true data-generating distributions
# ---------------------------------------------------------------------------

_CONTINUOUS = {
    "std_normal": {
        "sample": lambda rng, size: rng.standard_normal(size),
        "cdf": lambda x: sp.ndtr(x),
        "ppf": lambda q: sp.ndtri(q),
    },
    "exp1": {
        "sample": lambda rng, size: rng.standard_exponential(size),
        "cdf": lambda x: np.where(np.asarray(x, dtype=float) > 0, -np.expm1(-np.clip(x, 0, None)), 0.0),
        "ppf": lambda q: -np.log1p(-np.asarray(q, dtype=float)),
    },
}


@dataclass(frozen=True, eq=False)
class TrueDistribution:
    """The data-generating distribution: a finite pmf table, an integer power
    law, or a named continuous law (sampler + cdf)."""

    kind: str  # "finite" | "power_law" | "continuous"
    values: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    exponent: Optional[float] = None
    cont_id: Optional[str] = None
    normalizer: float = 1.0

    @classmethod
    def finite_discrete(cls, values, probs) -> "TrueDistribution":
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if values.shape != probs.shape or values.ndim != 1:
            raise ValueError("values/probs must be matching 1-D arrays")
        if np.any(probs < 0):
            raise ValueError("negative probability")
        z = probs.sum()
        if z <= 0:
            raise ValueError("zero total mass")
        order = np.argsort(values)
        values, probs = values[order], probs[order] / z
        if abs(probs.sum() - 1.0) > 1e-12:  # paranoia after renormalization
            raise ValueError("pmf normalization failed")
        values.flags.writeable = False
        probs.flags.writeable = False
        return cls(kind="finite", values=values, probs=probs, normalizer=float(z))

    @classmethod
    def power_law(cls, exponent) -> "TrueDistribution":
        exponent = float(exponent)
        if exponent <= 1.0:
            raise ValueError("non-summable")
        return cls(kind="power_law", exponent=exponent, normalizer=zeta_partial(exponent))

    @classmethod
    def continuous(cls, name) -> "TrueDistribution":
        if name not in _CONTINUOUS:
            raise ValueError(f"unknown continuous law {name!r}")
        return cls(kind="continuous", cont_id=name)

    # -- sampling ----------------------------------------------------------

    def sample(self, rng, size=None):
        if self.kind == "finite":
            cum = np.cumsum(self.probs)
            idx = np.searchsorted(cum, rng.random(size), side="right")
            return self.values[np.minimum(idx, self.values.size - 1)]
        if self.kind == "power_law":
            return _power_law_sample(self.exponent, rng, size)
        return _CONTINUOUS[self.cont_id]["sample"](rng, size)

    # -- exact functionals -------------------------------------------------

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "finite":
            return np.cumsum(self.probs)[
                np.clip(np.searchsorted(self.values, x, side="right") - 1, -1, None)
            ] * (x >= self.values[0])
        if self.kind == "power_law":
            p, z = self.exponent, self.normalizer
            k = np.floor(x)
            out = np.where(k >= 1, 1.0 - sp.zeta(p, np.clip(k, 1, None) + 1.0) / z, 0.0)
            return out if out.ndim else float(out)
        return _CONTINUOUS[self.cont_id]["cdf"](x)

    def pmf(self, k):
        if self.kind == "finite":
            k = np.asarray(k, dtype=float)
            hit = np.isclose(k[..., None], self.values[None, ...]) if k.ndim else np.isclose(k, self.values)
            return (hit * self.probs).sum(axis=-1)
        if self.kind == "power_law":
            return power_law_pmf(self.exponent, k)
        raise ValueError("pmf undefined for continuous laws")

    def interval_mass(self, lo, hi) -> float:
        """Mass of the half-open interval [lo, hi)."""
        if self.kind == "continuous":
            c = _CONTINUOUS[self.cont_id]["cdf"]
            return float(c(hi) - c(lo)) if np.isfinite(hi) else float(1.0 - c(lo))
        if self.kind == "finite":
            mask = (self.values >= lo) & (self.values < hi)
            return float(self.probs[mask].sum())
        p, z = self.exponent, self.normalizer
        if hi <= 1.0:
            return 0.0
        klo = max(1.0, float(np.ceil(lo)))
        lower = float(sp.zeta(p, klo))
        upper = 0.0 if not np.isfinite(hi) else float(sp.zeta(p, max(klo, float(np.ceil(hi)))))
        return (lower - upper) / z

    def true_mean(self, f: Functional) -> float:
        """Exact P0 f for indicator functionals and finite-support laws."""
        if f.kind == "indicator":
            return self.interval_mass(f.lo, f.hi)
        if self.kind == "finite":
            return float(np.sum(self.probs * f(self.values)))
        raise NotImplementedError("exact mean only for indicators on infinite-support laws")

    def as_atomic_measure(self) -> AtomicMeasure:
        if self.kind != "finite":
            raise ValueError("only finite laws convert to atomic measures")
        return AtomicMeasure(self.values, self.probs, normalized=True)


def true_distribution_registry():
    """The named data-generating laws used throughout the experiments."""
    return {
        "P1": TrueDistribution.finite_discrete([1, 2, 3, 4, 5], [0.2, 0.2, 0.2, 0.3, 0.1]),
        "P2": TrueDistribution.power_law(3.0),
        "P3": TrueDistribution.power_law(2.0),
        "P4": TrueDistribution.power_law(1.5),
        "EXP1": TrueDistribution.continuous("exp1"),
        "STD_NORMAL": TrueDistribution.continuous("std_normal"),
    }


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def partition_of(sample) -> Partition:
    """Group a sample into distinct values with multiplicities.

    Distinctness is exact floating-point equality; the distinct values keep
    their first-appearance order so downstream computations are deterministic
    given a seed.

    Parameters
    ----------
    sample : array-like of real, nonempty

    Returns
    -------
    Partition
    """
    arr = as_sample_array(sample)
    vals, first_idx, counts = np.unique(arr, return_index=True, return_counts=True)
    order = np.argsort(first_idx)
    return Partition(vals[order], counts[order], n=arr.size)


def integrate(measure: AtomicMeasure, f) -> float:
    """Integral of ``f`` against a finite atomic measure: sum of w_i * f(x_i)."""
    if isinstance(f, Functional) and f.kind == "indicator":
        vals = np.asarray(f(measure.locations), dtype=float)
    else:
        fn = f.fn if isinstance(f, Functional) else f
        try:
            vals = np.asarray(fn(measure.locations), dtype=float)
        except Exception:
            vals = np.asarray([fn(x) for x in measure.locations], dtype=float)
        if vals.shape != measure.locations.shape:
            vals = np.asarray([fn(x) for x in measure.locations], dtype=float)
    return float(measure.weights @ np.atleast_1d(vals))


def power_law_pmf(exponent, k):
    """pmf of the integer power law P(X = k) proportional to k**(-exponent).

    The normalizer is computed by tail-bounded partial summation (relative
    error below 1e-12). ``exponent`` must exceed 1; ``k`` may be scalar or
    array of positive integers.
    """
    exponent = float(exponent)
    if exponent <= 1.0:
        raise ValueError("non-summable")
    karr = np.asarray(k)
    if np.any(karr < 1) or np.any(karr != np.floor(karr)):
        raise ValueError("k must be a positive integer")
    out = np.asarray(karr, dtype=float) ** (-exponent) / zeta_partial(exponent)
    return out if out.ndim else float(out)


@lru_cache(maxsize=None)
def zeta_partial(p: float, terms: int = 1000) -> float:
    """Riemann zeta via partial summation with an Euler-Maclaurin tail bound.

    With 1000 explicit terms the truncation error is far below 1e-12 relative
    for every exponent > 1 used here.
    """
    p = float(p)
    if p <= 1.0:
        raise ValueError("non-summable")
    K = int(terms)
    k = np.arange(1, K, dtype=float)
    head = np.sum(k ** (-p))
    # Euler-Maclaurin tail starting at K: integral + half term + derivative corrections
    tail = K ** (1.0 - p) / (p - 1.0) + 0.5 * K ** (-p) + p / 12.0 * K ** (-p - 1.0) \
        - p * (p + 1.0) * (p + 2.0) / 720.0 * K ** (-p - 3.0)
    return float(head + tail)


# ---------------------------------------------------------------------------
# power-law sampling: exact inverse CDF (table head + Hurwitz-zeta tail)
# ---------------------------------------------------------------------------

_power_tables: dict = {}


def _power_head(p: float):
    tab = _power_tables.get(p)
    if tab is None:
        k = np.arange(1, _POWER_HEAD_SIZE + 1, dtype=float)
        cum = np.cumsum(k ** (-p))
        cum /= zeta_partial(p)
        # correct the last entries for the (tiny) mismatch between the partial
        # normalizer and the cumulative sum so searchsorted stays monotone
        tab = (cum, float(cum[-1]))
        _power_tables[p] = tab
    return tab


def _power_law_sample(p: float, rng, size):
    cum, head_mass = _power_head(p)
    u = rng.random(size)
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(u)
    out = np.empty(u.shape, dtype=float)
    idx = np.searchsorted(cum, u, side="left")
    in_head = idx < _POWER_HEAD_SIZE
    out[in_head] = idx[in_head] + 1.0
    if np.any(~in_head):
        out[~in_head] = _power_tail_invert(p, u[~in_head])
    return float(out[0]) if scalar else out


def _power_tail_invert(p: float, u):
    """Smallest integer k with cdf(k) >= u, for draws beyond the head table.

    Uses zeta(p, k+1) = sum_{j > k} j^{-p}: find the smallest k with
    zeta(p, k+1) <= (1-u) * zeta(p) by integer bisection.
    """
    z = zeta_partial(p)
    target = (1.0 - u) * z
    target = np.maximum(target, 1e-300)
    lo = np.full(u.shape, float(_POWER_HEAD_SIZE))
    # asymptotic upper bound: zeta(p, K) ~ K^(1-p)/(p-1)
    hi = np.maximum(4.0 * ((p - 1.0) * target) ** (1.0 / (1.0 - p)), lo * 4.0)
    while np.any(sp.zeta(p, hi + 1.0) > target):
        hi = np.where(sp.zeta(p, hi + 1.0) > target, hi * 4.0, hi)
    # invariant: zeta(p, lo+1) > target >= zeta(p, hi+1); while the gap is at
    # least 2 the midpoint is strictly interior, so progress is guaranteed and
    # the loop ends with hi = lo + 1 = the smallest k with cdf(k) >= u
    while np.any(hi - lo >= 2.0):
        mid = np.floor((lo + hi) / 2.0)
        take_hi = sp.zeta(p, mid + 1.0) <= target
        hi = np.where(take_hi, mid, hi)
        lo = np.where(take_hi, lo, mid)
    return hi
