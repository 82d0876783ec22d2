"""Input validation helpers.

Small, reusable checks that turn array-likes into canonical numpy arrays
and raise :class:`~weightedu.errors.InputError` with a readable message
when a contract is violated. Kept separate so the estimator, the CLI and
the plain functions all validate identically.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


def as_float_vector(y, name: str = "y") -> np.ndarray:
    """Coerce to a finite 1-d float vector."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1:
        arr = np.squeeze(arr)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {np.shape(y)}")
    if arr.size < 2:
        raise InputError(f"{name} needs at least 2 entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_phenotype(y) -> np.ndarray:
    """Validate a phenotype vector: finite, 1-d, length >= 2."""
    return as_float_vector(y, name="phenotype")


def as_genotype_values(G, require_dosage: bool = True) -> np.ndarray:
    """Coerce to an (n, P) float matrix of complete genotypes.

    With ``require_dosage`` the entries must lie in {0, 1, 2}; otherwise
    any finite values are accepted (the exp-distance kernel does not care
    about the coding).
    """
    arr = np.asarray(G, dtype=float)
    if arr.ndim != 2:
        raise InputError(f"genotypes must be a 2-d matrix, got shape {np.shape(G)}")
    n, p = arr.shape
    if n < 2 or p < 1:
        raise InputError(f"genotype matrix needs n >= 2 samples and P >= 1 variants, got {n}x{p}")
    if not np.all(np.isfinite(arr)):
        raise InputError("genotype matrix contains non-finite values (impute missing entries first)")
    if require_dosage and not np.isin(arr, (0.0, 1.0, 2.0)).all():
        bad = arr[~np.isin(arr, (0.0, 1.0, 2.0))]
        raise InputError(f"genotype entries must be in {{0, 1, 2}}; found e.g. {bad.flat[0]!r}")
    return arr


def as_covariate_matrix(X, n: int, add_intercept: bool = False) -> np.ndarray:
    """Validate an n x (J+1) covariate matrix whose first column is the intercept.

    ``add_intercept`` prepends a column of ones (for callers that pass raw
    covariates). Checks: finite entries, leading intercept column, full
    column rank, and J+1 < n so the residual variance is estimable.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"covariates must be a 2-d matrix, got shape {np.shape(X)}")
    if arr.shape[0] != n:
        raise InputError(f"covariates have {arr.shape[0]} rows but {n} samples were given")
    if not np.all(np.isfinite(arr)):
        raise InputError("covariate matrix contains non-finite values (missing covariates are not imputed)")
    if add_intercept:
        arr = np.column_stack([np.ones(n), arr])
    if not np.allclose(arr[:, 0], 1.0):
        raise InputError("first covariate column must be an all-ones intercept")
    if arr.shape[1] >= n:
        raise InputError(f"need more samples than covariate columns: n={n}, columns={arr.shape[1]}")
    if np.linalg.matrix_rank(arr) < arr.shape[1]:
        raise InputError("covariate matrix is rank-deficient")
    return arr


def check_seed(seed, name: str = "seed") -> int:
    """Validate a non-negative integer RNG seed."""
    if isinstance(seed, (bool, float)):
        raise InputError(f"{name} must be an integer, got {seed!r}")
    try:
        value = int(seed)
    except (TypeError, ValueError):
        raise InputError(f"{name} must be an integer, got {seed!r}") from None
    if value < 0:
        raise InputError(f"{name} must be non-negative, got {value}")
    return value


def as_rng(seed, name: str = "seed") -> np.random.Generator:
    """Build a Generator from an int seed, a SeedSequence, or a Generator.

    Library entry points take plain integer seeds; internal pipelines
    hand derived SeedSequence children around so replicates stay
    independent and order-insensitive. Both land here.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(check_seed(seed, name))
