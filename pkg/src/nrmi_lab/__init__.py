"""Normalized random measures with independent increments: posterior moments,
Ferguson-Klass sampling, bias-corrected credible intervals, and a coverage harness."""

from nrmi_lab.core_measures import (
    AtomicMeasure,
    Functional,
    Partition,
    TrueDistribution,
    integrate,
    partition_of,
    power_law_pmf,
)
from nrmi_lab.levy_intensities import (
    AssumptionReport,
    IntensitySpec,
    check_assumption_a,
    laplace_exponent,
    levy_tail_mass,
    tau,
    tau_ratio,
)
from nrmi_lab.estimators import NotFittedError, NRMIPosterior
from nrmi_lab.harness_cli import (
    CoverageRow,
    ExperimentConfig,
    cli_dispatch,
    run_coverage,
    run_density,
)
from nrmi_lab.crm_sampler import (
    PosteriorDraw,
    TruncationPolicy,
    ferguson_klass_jumps,
    posterior_functional_draws,
    sample_nggp_prior,
    sample_posterior,
)
from nrmi_lab.inference import (
    CredibleInterval,
    bias_term,
    bvm_variance_check,
    credible_interval,
    eppf_loglik,
    mle_sigma,
    ncluster_pmf,
)
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

__all__ = [
    "AtomicMeasure",
    "Partition",
    "TrueDistribution",
    "Functional",
    "partition_of",
    "integrate",
    "power_law_pmf",
    "IntensitySpec",
    "AssumptionReport",
    "tau",
    "tau_ratio",
    "laplace_exponent",
    "levy_tail_mass",
    "check_assumption_a",
    "Region",
    "LatentDensity",
    "build_latent_density",
    "v_derivative",
    "posterior_moment",
    "posterior_mixed_moment",
    "posterior_mean_nggp",
    "prior_moment",
    "sample_latent",
    "consistency_diagnostic",
    "TruncationPolicy",
    "PosteriorDraw",
    "ferguson_klass_jumps",
    "sample_nggp_prior",
    "sample_posterior",
    "posterior_functional_draws",
    "CredibleInterval",
    "bias_term",
    "credible_interval",
    "bvm_variance_check",
    "eppf_loglik",
    "mle_sigma",
    "ncluster_pmf",
    "NRMIPosterior",
    "NotFittedError",
    "ExperimentConfig",
    "CoverageRow",
    "run_coverage",
    "run_density",
    "cli_dispatch",
]

__version__ = "0.1.0"
