"""Backdoor poisoning of regularized linear classifiers: exact
high-dimensional asymptotics, population limits, and a matching
finite-sample simulator.

The covariance layer reduces every spectral quantity to resolvent
functionals; the squared loss admits fully closed-form theory; general
losses go through a damped self-consistent solver; and the simulator
draws the corresponding finite Gaussian-mixture problems and fits them
exactly, so theory and experiment can be overlaid from one config.
"""

from .covariance import (
    CovarianceModel,
    DenseCovariance,
    EigenPairCovariance,
    IsotropicCovariance,
    ProblemSpec,
    ResolventParams,
    SpectrumCovariance,
    basis_vector,
    cov_quad,
    noise_trace,
    resolvent_quad,
    resolvent_sq_quad,
    resolvent_sq_trace,
    resolvent_trace,
    resolvent_weighted_quad,
)
from .fixed_point import (
    FixedPointState,
    SolverConfig,
    TheoryPrediction,
    proxy_expected_norm_sq,
    solve_self_consistent,
    theory_predictions,
)
from .losses import LogisticLoss, SquaredLoss, f_both, f_value, loss_by_name, prox
from .metrics import (
    VarianceDecomposition,
    attack_success,
    clean_accuracy,
    noise_floor_ablation,
    std_normal_cdf,
    variance_decomposition,
)
from .population import (
    PopulationMinimum,
    PopulationParams,
    benign_minimizer_eigen,
    minimize_population_eigen,
    one_step_gradient,
    population_loss_eigen,
)
from .quadrature import gh_expect, standard_normal_nodes
from .simulate import (
    ErmRunResult,
    FitResult,
    RawDataset,
    absorb,
    evaluate_analytic,
    evaluate_empirical,
    logistic_fit,
    poison,
    ridge_fit,
    run_replicate,
    sample_clean,
    stream_rng,
)
from .theory_squared import (
    AlphaStar,
    GramEntries,
    SquaredScalars,
    alpha_star_eigen,
    alpha_star_exact,
    alpha_star_isotropic,
    gram_entries,
    phi_sensitivity,
    projections_eigen,
    projections_exact,
    projections_isotropic,
    solve_tau,
)

__version__ = "0.1.0"

__all__ = [
    "CovarianceModel", "IsotropicCovariance", "EigenPairCovariance",
    "SpectrumCovariance", "DenseCovariance", "ProblemSpec", "ResolventParams",
    "basis_vector", "resolvent_quad", "resolvent_weighted_quad",
    "resolvent_sq_quad", "resolvent_trace", "resolvent_sq_trace",
    "noise_trace", "cov_quad",
    "SquaredScalars", "GramEntries", "AlphaStar", "solve_tau", "gram_entries",
    "projections_exact", "alpha_star_exact", "projections_eigen",
    "alpha_star_eigen", "projections_isotropic", "alpha_star_isotropic",
    "phi_sensitivity",
    "SquaredLoss", "LogisticLoss", "loss_by_name", "prox", "f_value", "f_both",
    "gh_expect", "standard_normal_nodes",
    "SolverConfig", "FixedPointState", "TheoryPrediction",
    "solve_self_consistent", "theory_predictions", "proxy_expected_norm_sq",
    "PopulationParams", "PopulationMinimum", "population_loss_eigen",
    "minimize_population_eigen", "benign_minimizer_eigen", "one_step_gradient",
    "std_normal_cdf", "clean_accuracy", "attack_success",
    "VarianceDecomposition", "variance_decomposition", "noise_floor_ablation",
    "RawDataset", "FitResult", "ErmRunResult", "stream_rng", "sample_clean",
    "poison", "absorb", "ridge_fit", "logistic_fit", "evaluate_analytic",
    "evaluate_empirical", "run_replicate",
]
