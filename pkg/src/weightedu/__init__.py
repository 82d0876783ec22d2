"""weightedu: rank-based weighted-similarity association testing.

A distribution-robust multi-variant association test for rare genetic
variants. Genotype similarity between sample pairs (rare alleles
upweighted) is held against phenotypic similarity on the normal-quantile
scale; the resulting pairwise statistic is referred to its asymptotic
mixture-of-chi-squared null, with permutation and covariate-adjusted
paths alongside.

The pieces compose in pipeline order::

    data       parse/impute/filter genotype, phenotype, covariate tables
    similarity pairwise genotype kernels (weighted allele sharing, ...)
    transform  phenotype rank/quantile normalization
    statistic  the centered pairwise statistic itself
    nulldist   mixture tails (analytic + Monte-Carlo) and permutations
    projection covariate adjustment by residual projection
    estimator  a scikit-learn-style front end (WeightedUTest)
    simulate   type-I error / power studies
    cli        `weightedu assoc | simulate | nullcheck`
    toydata    bundled datasets with precomputed oracle records
"""

from .data import (
    GenotypeMatrix,
    MafVector,
    align_by_sample,
    compute_maf,
    filter_by_maf,
    fold_frequency,
    impute_missing,
    load_covariates,
    load_genotypes,
    load_phenotype,
)
from .errors import (
    DegenerateTestWarning,
    InputError,
    MixtureAccuracyError,
    NumericalError,
    WeightedUError,
)
from .estimator import WeightedUTest
from .nulldist import (
    DaviesInfo,
    MixtureSpec,
    TestDiagnostics,
    TestResult,
    asymptotic_pvalue,
    doubly_centered_kernel,
    mixture_tail_montecarlo,
    mixture_tail_probability,
    permutation_pvalue,
    scaled_eigenvalues,
)
from .projection import ProjectionContext, adjusted_test, project_residuals, projected_kernel
from .similarity import SimilarityMatrix, exp_distance_similarity, weighted_ibs
from .simulate import (
    GenotypePool,
    MethodConfig,
    Scenario,
    StudyReport,
    draw_effects,
    run_study,
    sample_genotypes,
    simulate_phenotype,
    study_pvalues,
)
from .statistic import (
    CenteredWeightMatrix,
    build_weight_matrix,
    centered_weight_matrix,
    scaling_constant,
    u_components,
    wu_statistic,
)
from .toydata import OracleRecord, generate_toy_suite, load_oracles, toy_paths
from .transform import QuantileVector, RankNormalizer, quantile_transform, rank_with_ties

__version__ = "0.1.0"

__all__ = [
    "CenteredWeightMatrix",
    "DaviesInfo",
    "DegenerateTestWarning",
    "GenotypeMatrix",
    "GenotypePool",
    "InputError",
    "MafVector",
    "MethodConfig",
    "MixtureAccuracyError",
    "MixtureSpec",
    "NumericalError",
    "OracleRecord",
    "ProjectionContext",
    "QuantileVector",
    "RankNormalizer",
    "Scenario",
    "SimilarityMatrix",
    "StudyReport",
    "TestDiagnostics",
    "TestResult",
    "WeightedUError",
    "WeightedUTest",
    "adjusted_test",
    "align_by_sample",
    "asymptotic_pvalue",
    "doubly_centered_kernel",
    "build_weight_matrix",
    "centered_weight_matrix",
    "compute_maf",
    "draw_effects",
    "exp_distance_similarity",
    "filter_by_maf",
    "fold_frequency",
    "generate_toy_suite",
    "impute_missing",
    "load_covariates",
    "load_genotypes",
    "load_oracles",
    "load_phenotype",
    "mixture_tail_montecarlo",
    "mixture_tail_probability",
    "permutation_pvalue",
    "project_residuals",
    "projected_kernel",
    "quantile_transform",
    "rank_with_ties",
    "run_study",
    "sample_genotypes",
    "scaled_eigenvalues",
    "scaling_constant",
    "simulate_phenotype",
    "study_pvalues",
    "toy_paths",
    "u_components",
    "weighted_ibs",
    "wu_statistic",
]
