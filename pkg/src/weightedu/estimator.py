"""Estimator-style front end tying the pipeline stages together.

``WeightedUTest`` follows the scikit-learn parameter protocol
(constructor stores hyper-parameters verbatim, ``fit`` validates and
computes, fitted attributes carry trailing underscores, ``get_params``/
``set_params``/``clone`` all work), but it is a *test*, not a predictor:
``fit(X, y)`` runs the association test of the multi-variant genotype
block X against the phenotype y and leaves the result on the instance.
"""

from __future__ import annotations

import warnings
from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_float_vector, as_genotype_values, check_seed
from .data import fold_frequency
from .errors import InputError
from .nulldist import asymptotic_pvalue, permutation_pvalue
from .projection import adjusted_test, project_residuals, projected_kernel
from .similarity import (
    SIMILARITY_KINDS,
    exp_distance_similarity,
    weighted_ibs,
)
from .statistic import NORMS, centered_weight_matrix
from .transform import TRANSFORMS, quantile_transform


class WeightedUTest(BaseEstimator):
    """Rank-based weighted-similarity association test.

    Parameters
    ----------
    kernel : {"weighted-ibs", "exp-distance"}
        Pairwise genotype similarity. The default rare-variant-weighted
        allele-sharing kernel needs polymorphic columns; monomorphic
        ones are dropped with a warning before it is built.
    transform : {"quantile", "rank", "none"}
        Phenotype transform. "quantile" (default) maps ranks through the
        standard normal quantile function and is what makes the test
        distribution-robust; "none" centers/scales the raw phenotype and
        exists as the non-robust baseline.
    c_norm : {"L2", "L1"}
        How the similarity matrix is centered: off-diagonal mean (L2) or
        off-diagonal lower median (L1).
    scale : float
        Length scale of the "exp-distance" kernel; ignored otherwise.
    permutations : int
        If > 0, also compute a permutation p-value with this many
        replicates (requires ``random_state``).
    random_state : int or None
        Seed for the permutation stream.
    zero_diagonal_null : bool
        Covariate-adjusted runs only: re-center the projected kernel by
        zeroing its diagonal (used consistently in the statistic and the
        null mixture). Off by default; see :mod:`weightedu.projection`.
    accuracy : float
        Absolute accuracy requested from the tail-probability inverter.

    Attributes
    ----------
    statistic_ : float
    p_value_ : float
        Asymptotic (mixture chi-squared) p-value.
    p_permutation_ : float or None
    result_ : TestResult
        Full record, including diagnostics and mixture weights.
    eigenvalues_ : ndarray
        Scaled mixture weights, descending.
    c_ : float
        Centering constant actually used.
    n_samples_, n_variants_ : int
        Dimensions after monomorphic-column dropping.
    """

    def __init__(
        self,
        kernel: str = "weighted-ibs",
        transform: str = "quantile",
        c_norm: str = "L2",
        scale: float = 1.0,
        permutations: int = 0,
        random_state=None,
        zero_diagonal_null: bool = False,
        accuracy: float = 1e-6,
    ):
        self.kernel = kernel
        self.transform = transform
        self.c_norm = c_norm
        self.scale = scale
        self.permutations = permutations
        self.random_state = random_state
        self.zero_diagonal_null = zero_diagonal_null
        self.accuracy = accuracy

    def _validate_params_strict(self):
        if self.kernel not in SIMILARITY_KINDS:
            raise InputError(f"kernel must be one of {SIMILARITY_KINDS}, got {self.kernel!r}")
        if self.transform not in TRANSFORMS:
            raise InputError(f"transform must be one of {TRANSFORMS}, got {self.transform!r}")
        if self.c_norm not in NORMS:
            raise InputError(f"c_norm must be one of {NORMS}, got {self.c_norm!r}")
        if not (float(self.scale) > 0.0):
            raise InputError(f"scale must be positive, got {self.scale}")
        if int(self.permutations) < 0:
            raise InputError("permutations must be >= 0")

    def fit(self, X, y, covariates=None):
        """Run the test of genotype block X (n x P dosages) against y."""
        self._validate_params_strict()
        G = as_genotype_values(X)
        yv = as_float_vector(y, "y")
        if yv.size != G.shape[0]:
            raise InputError(
                f"genotypes have {G.shape[0]} samples but phenotype has {yv.size}"
            )

        freq = fold_frequency(G.mean(axis=0) / 2.0)
        if self.kernel == "weighted-ibs":
            poly = freq > 0.0
            if not np.all(poly):
                warnings.warn(
                    f"dropping {int((~poly).sum())} monomorphic variant(s): "
                    "allele-frequency weights are undefined there",
                    UserWarning,
                    stacklevel=2,
                )
                G = G[:, poly]
                freq = freq[poly]
            if G.shape[1] == 0:
                raise InputError("all variants are monomorphic; nothing to test")
            W = weighted_ibs(G, freq)
        else:
            W = exp_distance_similarity(G, scale=float(self.scale))

        Q = quantile_transform(yv, transform=self.transform)
        K = centered_weight_matrix(W, norm=self.c_norm)

        if covariates is None:
            result = asymptotic_pvalue(K, Q, accuracy=float(self.accuracy))
            perm_kernel, perm_q = K, Q.q
            sigma_hat = None
        else:
            result, ctx = adjusted_test(
                K,
                Q,
                covariates,
                zero_diagonal_null=bool(self.zero_diagonal_null),
                accuracy=float(self.accuracy),
            )
            qe, _ = project_residuals(Q, covariates)
            if self.zero_diagonal_null:
                ke = projected_kernel(K, ctx).copy()
                np.fill_diagonal(ke, 0.0)
                perm_kernel = ke
            else:
                perm_kernel = K
            perm_q = qe
            sigma_hat = ctx.sigma_hat

        B = int(self.permutations)
        if B > 0:
            if self.random_state is None:
                raise InputError(
                    "permutations require an explicit integer random_state "
                    "so results are reproducible"
                )
            p_perm = permutation_pvalue(
                perm_kernel, perm_q, B, check_seed(self.random_state)
            )
            result = replace(result, p_permutation=p_perm, n_permutations=B)

        self.result_ = result
        self.statistic_ = result.statistic
        self.p_value_ = result.p_asymptotic
        self.p_permutation_ = result.p_permutation
        self.eigenvalues_ = result.scaled_eigenvalues
        self.c_ = K.c
        self.sigma_hat_ = sigma_hat
        self.n_samples_ = int(G.shape[0])
        self.n_variants_ = int(G.shape[1])
        return self

    def fit_test(self, X, y, covariates=None):
        """Convenience: fit and return the full TestResult."""
        return self.fit(X, y, covariates=covariates).result_
