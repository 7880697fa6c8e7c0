"""Dirichlet-process mixture models for repeated-attempt outcome data with nonignorable missingness."""
from .core import (
    AttemptRecord,
    ClusterParams,
    Components,
    ContractError,
    Dataset,
    DomainError,
    Layout,
    ModelConfig,
    PosteriorDraw,
    StandardizationRecord,
    StickWeights,
    cluster_kernel,
    conditional_outcome_weights,
    covariate_mixture_weights,
    normalize_attempts,
    pattern_mixture_weights,
    quatro_merge_map,
    read_csv,
    standardize,
    stick_break,
    write_csv,
)
from .estimands import (
    EstimandSummary,
    gof_expectation,
    gof_table,
    load_draws,
    mc_expectation_y_given_z,
    save_draws,
    summarize_posterior,
    treatment_effect,
)
from .extrapolation import (
    STANDARD_PRIORS,
    ExtrapolationBounds,
    ExtrapolationPriorSpec,
    PriorKind,
    compute_bounds,
    sample_extrapolation_mean,
)
from .gibbs import GibbsState, HyperState, run_chain
from .metrics import MetricsReport, compare_priors, replicate_priors, replicate_study
from .simulate import ScenarioSpec, generate, quatro_attempt_probs, true_theta

__version__ = "0.1.0"
