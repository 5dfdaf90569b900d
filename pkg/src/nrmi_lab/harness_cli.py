"""Experiment harness and command-line surface.

Coverage tables and posterior-density histograms are produced by a
replication-level task pool whose per-replication random streams are derived
from ``SeedSequence(seed, spawn_key=(purpose, dist, n, rep))``, so results
are byte-identical for any worker count.  The CLI wraps the harness plus the
one-shot diagnostics (assumption checks, moments, draws, intervals, the
stable-index MLE, and the cluster-count prior).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.stats

from nrmi_lab._validation import NumericalError
from nrmi_lab.core_measures import (
    Functional,
    partition_of,
    true_distribution_registry,
)
from nrmi_lab.crm_sampler import TruncationPolicy, posterior_functional_draws
from nrmi_lab.inference import (
    bias_term,
    credible_interval,
    mle_sigma,
    ncluster_pmf,
)
from nrmi_lab.levy_intensities import IntensitySpec, check_assumption_a
from nrmi_lab.posterior_engine import build_latent_density, posterior_moment

__all__ = [
    "ExperimentConfig",
    "CoverageRow",
    "run_coverage",
    "run_density",
    "cli_dispatch",
    "main",
]

# stable codes for the random streams, independent of config composition
_DIST_CODES = {"P1": 1, "P2": 2, "P3": 3, "P4": 4, "EXP1": 5, "STD_NORMAL": 6}
_PURPOSE_COVERAGE, _PURPOSE_DENSITY = 0, 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _parse_functional(text: str) -> Functional:
    kind, _, rest = text.partition(":")
    if kind.strip() != "indicator":
        raise ValueError(f"unknown functional id {text!r}; "
                         "expected 'indicator:lo,hi'")
    try:
        lo_s, hi_s = rest.split(",")
        lo, hi = float(lo_s), float(hi_s)
    except ValueError as exc:
        raise ValueError(f"malformed functional id {text!r}") from exc
    return Functional.indicator(lo, hi)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a data-generating law, a generalized-gamma prior, and
    the replication protocol.  Every field round-trips through the flat
    ``key = value`` file format."""

    true_dist: str = "P1"
    a: float = 1.0
    sigma: float = 0.5
    theta: float = 1.0
    base_h: str = "std_normal"
    sample_sizes: Tuple[int, ...] = (10, 100, 1000)
    replications: int = 500
    posterior_draws_per_rep: int = 600
    functional: str = "indicator:2,inf"
    alpha: float = 0.025
    beta: float = 0.975
    seed: int = 0
    truncation_epsilon: Optional[float] = None
    output_dir: str = "."

    def __post_init__(self):
        for did in self.dist_ids():
            if did not in _DIST_CODES:
                raise ValueError(f"unknown true_dist {did!r}; "
                                 f"choose from {sorted(_DIST_CODES)}")
        if not self.sample_sizes:
            raise ValueError("sample_sizes must be nonempty")
        if any(int(n) <= 0 for n in self.sample_sizes):
            raise ValueError("sample sizes must be positive")
        if int(self.replications) < 1:
            raise ValueError("replications must be at least 1")
        if int(self.posterior_draws_per_rep) < 1:
            raise ValueError("posterior_draws_per_rep must be at least 1")
        if not 0.0 < self.alpha < self.beta < 1.0:
            raise ValueError("need 0 < alpha < beta < 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        if self.truncation_epsilon is not None and not (
                0.0 < float(self.truncation_epsilon) < 1.0):
            raise ValueError("truncation_epsilon must lie in (0, 1)")
        _parse_functional(self.functional)
        object.__setattr__(self, "sample_sizes",
                           tuple(int(n) for n in self.sample_sizes))

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if field.name == "sample_sizes":
                value = ",".join(str(n) for n in value)
            elif value is None:
                value = "none"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{field.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in known:
                raise ValueError(f"bad config line {lineno}: {raw!r}")
            if key == "sample_sizes":
                kwargs[key] = tuple(int(tok) for tok in value.split(","))
            elif key == "truncation_epsilon":
                kwargs[key] = None if value.lower() == "none" else float(value)
            elif key in ("a", "sigma", "theta", "alpha", "beta"):
                kwargs[key] = float(value)
            elif key in ("replications", "posterior_draws_per_rep", "seed"):
                kwargs[key] = int(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def to_file(self, path) -> None:
        Path(path).write_text(self.to_text())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    # -- derived pieces -----------------------------------------------------

    def dist_ids(self) -> Tuple[str, ...]:
        """The data-generating laws, a single id or a comma-separated list;
        replication streams are keyed by each id's global code, so a subset
        run reproduces the matching rows of a combined one."""
        return tuple(tok.strip() for tok in self.true_dist.split(","))

    def intensity(self) -> IntensitySpec:
        return IntensitySpec.nggp(a=self.a, sigma=self.sigma,
                                  theta=self.theta, base=self.base_h)

    def functional_object(self) -> Functional:
        return _parse_functional(self.functional)

    def policy_for(self, n: int) -> TruncationPolicy:
        if self.truncation_epsilon is not None:
            return TruncationPolicy.relative_tail(self.truncation_epsilon)
        return TruncationPolicy.for_sample_size(n)


@dataclasses.dataclass(frozen=True)
class CoverageRow:
    dist_id: str
    n: int
    corrected: bool
    coverage: float
    mc_stderr: float
    replications: int

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")
        want = math.sqrt(self.coverage * (1.0 - self.coverage)
                         / self.replications)
        if abs(self.mc_stderr - want) > 1e-12:
            raise ValueError("mc_stderr inconsistent with coverage count")


# ---------------------------------------------------------------------------
# the replication task
# ---------------------------------------------------------------------------


def _stream(seed, purpose, dist_code, n, rep) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(purpose, dist_code, n, rep)))


def _coverage_rep(task) -> Tuple[bool, bool]:
    """One replication: sample data, draw the posterior functional, build the
    paired intervals from the same draws, and score both against the truth."""
    cfg, dist_id, n, rep = task
    gen = _stream(cfg.seed, _PURPOSE_COVERAGE, _DIST_CODES[dist_id], n, rep)
    dist = true_distribution_registry()[dist_id]
    spec = cfg.intensity()
    f = cfg.functional_object()

    data = dist.sample(gen, n)
    part = partition_of(data)
    draws = posterior_functional_draws(
        spec, part, f, cfg.policy_for(n), gen, cfg.posterior_draws_per_rep)

    p0f = dist.true_mean(f)
    plain = credible_interval(draws, cfg.alpha, cfg.beta)
    pnf = float(np.mean(f(data)))
    hf = spec.base.true_mean(f)
    b = bias_term(cfg.sigma, part.n_clusters, n, hf, pnf)
    return (plain.covers(p0f),
            plain.lo - b <= p0f <= plain.hi - b)


def _worker_count() -> int:
    raw = os.environ.get("NRMI_LAB_THREADS", "").strip()
    if raw:
        workers = int(raw)
        if workers < 1:
            raise ValueError("NRMI_LAB_THREADS must be positive")
        return workers
    return os.cpu_count() or 1


def _run_tasks(fn, tasks):
    workers = _worker_count()
    if workers == 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(tasks) // (8 * workers))
        return list(pool.map(fn, tasks, chunksize=chunk))


def _prepare_output_dir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


# ---------------------------------------------------------------------------
# coverage and density runs
# ---------------------------------------------------------------------------


def run_coverage(config: ExperimentConfig) -> List[CoverageRow]:
    """Coverage of the paired equal-tail intervals over replications, one
    corrected and one uncorrected row per sample size; also writes
    ``coverage.csv`` into the output directory."""
    out = _prepare_output_dir(config)
    rows: List[CoverageRow] = []
    for dist_id in config.dist_ids():
        for n in config.sample_sizes:
            tasks = [(config, dist_id, n, rep)
                     for rep in range(config.replications)]
            hits = _run_tasks(_coverage_rep, tasks)
            for corrected in (False, True):
                cov = float(np.mean([h[corrected] for h in hits]))
                rows.append(CoverageRow(
                    dist_id=dist_id, n=n, corrected=corrected,
                    coverage=cov,
                    mc_stderr=math.sqrt(cov * (1.0 - cov)
                                        / config.replications),
                    replications=config.replications))
    write_coverage_csv(rows, out / "coverage.csv", config)
    return rows


def write_coverage_csv(rows: Sequence[CoverageRow], path, config) -> None:
    lines = [f"# config={config.config_hash()} seed={config.seed}",
             "dist,n,corrected,coverage,stderr,reps"]
    for r in rows:
        lines.append(f"{r.dist_id},{r.n},{str(r.corrected).lower()},"
                     f"{r.coverage:.6f},{r.mc_stderr:.6f},{r.replications}")
    Path(path).write_text("\n".join(lines) + "\n")


def run_density(config: ExperimentConfig) -> List[Path]:
    """Freedman–Diaconis histograms of the posterior draws of Pf, one file
    per sample size, with the sample skewness alongside each row."""
    out = _prepare_output_dir(config)
    spec = config.intensity()
    f = config.functional_object()
    ids = config.dist_ids()
    paths = []
    for dist_id in ids:
        dist = true_distribution_registry()[dist_id]
        for n in config.sample_sizes:
            gen = _stream(config.seed, _PURPOSE_DENSITY,
                          _DIST_CODES[dist_id], n, 0)
            data = dist.sample(gen, n)
            part = partition_of(data)
            draws = posterior_functional_draws(
                spec, part, f, config.policy_for(n), gen,
                config.posterior_draws_per_rep)
            edges = np.histogram_bin_edges(draws, bins="fd")
            counts, edges = np.histogram(draws, bins=edges)
            mass = counts / counts.sum()
            skew = float(scipy.stats.skew(draws))
            lines = [f"# config={config.config_hash()} seed={config.seed}",
                     "bin_lo,bin_hi,mass,skewness"]
            for lo, hi, m in zip(edges[:-1], edges[1:], mass):
                lines.append(f"{lo:.12g},{hi:.12g},{m:.12g},{skew:.6f}")
            stem = f"density_{n}" if len(ids) == 1 else f"density_{dist_id}_{n}"
            path = out / f"{stem}.csv"
            path.write_text("\n".join(lines) + "\n")
            paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# CLI plumbing
# ---------------------------------------------------------------------------


def _read_column(path) -> np.ndarray:
    """Floats from a text file, one per line; '#' comments and a single
    non-numeric header line are tolerated."""
    values = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError:
            if values:
                raise ValueError(f"non-numeric line {line!r} in {path}")
    if not values:
        raise ValueError(f"no numeric data found in {path}")
    return np.asarray(values)


def _spec_from_args(ns) -> IntensitySpec:
    if ns.family == "nggp":
        return IntensitySpec.nggp(a=ns.a, sigma=ns.sigma, theta=ns.theta,
                                  base=ns.base)
    if ns.family == "gdp":
        return IntensitySpec.gdp(a=ns.a, gamma=ns.gamma, base=ns.base)
    if ns.family == "extended_gamma":
        breaks = [float(tok) for tok in ns.breaks.split(",")] if ns.breaks else []
        values = [float(tok) for tok in ns.rates.split(",")]
        return IntensitySpec.extended_gamma(a=ns.a, breaks=breaks,
                                            values=values, base=ns.base)
    raise ValueError(f"unsupported family {ns.family!r}")


def _add_family_args(sub, default_family="nggp"):
    sub.add_argument("--family", default=default_family,
                     choices=["nggp", "gdp", "extended_gamma"])
    sub.add_argument("--a", type=float, default=1.0)
    sub.add_argument("--sigma", type=float, default=0.5)
    sub.add_argument("--theta", type=float, default=1.0)
    sub.add_argument("--gamma", type=int, default=1,
                     help="level count for the gdp family")
    sub.add_argument("--breaks", default="",
                     help="comma-separated cell boundaries (extended gamma)")
    sub.add_argument("--rates", default="1.0",
                     help="comma-separated per-cell rates (extended gamma)")
    sub.add_argument("--base", default="std_normal")


def _cmd_check_assumption(ns) -> int:
    report = check_assumption_a(_spec_from_args(ns))
    payload = {
        "family": ns.family,
        "monotone_ok": bool(report.monotone_ok),
        "bound_ok": bool(report.bound_ok),
        "c_estimates": [
            {"k": int(k), "x": float(x), "value": float(v)}
            for (k, x), v in sorted(report.c_estimates.items())
        ],
    }
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_moments(ns) -> int:
    spec = _spec_from_args(ns)
    part = partition_of(_read_column(ns.data))
    density = build_latent_density(spec, part)
    lines = ["lo,hi,order,moment"]
    for chunk in ns.sets.split(";"):
        lo_s, hi_s = chunk.split(",")
        lo, hi = float(lo_s), float(hi_s)
        for order in range(1, ns.max_order + 1):
            val = posterior_moment(spec, part, (lo, hi), order,
                                   density=density)
            lines.append(f"{lo:.12g},{hi:.12g},{order},{val:.12g}")
    _emit(lines, ns.out)
    return 0


def _cmd_sample_posterior(ns) -> int:
    spec = _spec_from_args(ns)
    data = _read_column(ns.data)
    part = partition_of(data)
    f = _parse_functional(ns.functional)
    eps = ns.epsilon if ns.epsilon is not None else 1.0 / math.sqrt(data.size)
    gen = np.random.default_rng(ns.seed)
    draws = posterior_functional_draws(
        spec, part, f, TruncationPolicy.relative_tail(eps), gen, ns.draws)
    lines = [f"# seed={ns.seed} epsilon={eps!r} functional={ns.functional}",
             "pf"]
    lines.extend(f"{v:.12g}" for v in draws)
    _emit(lines, ns.out)
    return 0


def _cmd_credible(ns) -> int:
    if (ns.draws_file is None) == (ns.data is None):
        raise ValueError("pass exactly one of --draws-file or --data")
    correction = None
    if ns.draws_file is not None:
        if ns.corrected:
            raise ValueError("--corrected needs --data to rebuild the "
                             "plug-in bias")
        draws = _read_column(ns.draws_file)
    else:
        spec = _spec_from_args(ns)
        data = _read_column(ns.data)
        part = partition_of(data)
        f = _parse_functional(ns.functional)
        eps = ns.epsilon if ns.epsilon is not None else 1.0 / math.sqrt(data.size)
        gen = np.random.default_rng(ns.seed)
        draws = posterior_functional_draws(
            spec, part, f, TruncationPolicy.relative_tail(eps), gen, ns.draws)
        if ns.corrected:
            if ns.family != "nggp":
                raise ValueError("the bias correction needs the nggp family")
            hf = spec.base.true_mean(f)
            pnf = float(np.mean(f(data)))
            correction = (ns.sigma, part.n_clusters, data.size, hf, pnf)
    ci = credible_interval(draws, ns.alpha, ns.beta, correction=correction)
    print(json.dumps({"lo": ci.lo, "hi": ci.hi, "alpha": ci.alpha,
                      "beta": ci.beta, "corrected": ci.corrected,
                      "bias": ci.bias}, indent=2))
    return 0


def _load_config(ns) -> ExperimentConfig:
    config = ExperimentConfig.from_file(ns.config)
    overrides = {}
    if ns.seed is not None:
        overrides["seed"] = ns.seed
    if ns.output_dir is not None:
        overrides["output_dir"] = ns.output_dir
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_coverage(ns) -> int:
    config = _load_config(ns)
    run_coverage(config)
    print(str(Path(config.output_dir) / "coverage.csv"))
    return 0


def _cmd_density(ns) -> int:
    config = _load_config(ns)
    for path in run_density(config):
        print(str(path))
    return 0


def _cmd_mle_sigma(ns) -> int:
    est = mle_sigma(partition_of(_read_column(ns.data)), a=ns.a,
                    theta=ns.theta)
    print(f"{est:.6f}")
    return 0


def _cmd_nclusters(ns) -> int:
    pmf = ncluster_pmf(_spec_from_args(ns), ns.n, normalize=not ns.raw)
    lines = ["k,probability"]
    lines.extend(f"{k + 1},{p:.12g}" for k, p in enumerate(pmf))
    _emit(lines, ns.out)
    return 0


def _emit(lines, out_path) -> None:
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nrmi-lab",
        description="Posterior inference for normalized random measures")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("check-assumption",
                        help="verify the monotone tau-ratio condition")
    _add_family_args(p)
    p.set_defaults(handler=_cmd_check_assumption)

    p = subs.add_parser("moments", help="posterior moments for given sets")
    _add_family_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--sets", default="2,inf",
                   help="semicolon-separated lo,hi pairs")
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_moments)

    p = subs.add_parser("sample-posterior",
                        help="posterior draws of P(f) as CSV")
    _add_family_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--functional", default="indicator:2,inf")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_sample_posterior)

    p = subs.add_parser("credible",
                        help="equal-tail interval from draws or data")
    _add_family_args(p)
    p.add_argument("--draws-file")
    p.add_argument("--data")
    p.add_argument("--functional", default="indicator:2,inf")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--beta", type=float, default=0.975)
    p.add_argument("--corrected", action="store_true")
    p.set_defaults(handler=_cmd_credible)

    p = subs.add_parser("coverage", help="replicate the coverage tables")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(handler=_cmd_coverage)

    p = subs.add_parser("density", help="posterior histograms per sample size")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(handler=_cmd_density)

    p = subs.add_parser("mle-sigma", help="stable-index MLE from a sample")
    p.add_argument("--data", required=True)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=1.0)
    p.set_defaults(handler=_cmd_mle_sigma)

    p = subs.add_parser("nclusters",
                        help="prior distribution of the cluster count")
    _add_family_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--raw", action="store_true",
                   help="skip normalization of the enumerated weights")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_nclusters)

    return parser


def cli_dispatch(argv=None) -> int:
    """Run one CLI invocation; returns 0 on success, 1 on usage errors, and
    2 on numerical failures."""
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return ns.handler(ns)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
