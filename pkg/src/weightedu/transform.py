"""Rank-based phenotype transforms feeding the cross-product kernel.

The headline transform replaces each phenotype value by the standard
normal quantile of its (tie-averaged) rank,

    q_i = ndtri((rank(y_i) - 0.5) / n),

which makes the test invariant to any strictly increasing relabeling of
the phenotype and immune to heavy tails: a Cauchy phenotype and a
Gaussian one with the same ordering produce the same q. Binary traits
need no special casing — all controls share one averaged rank, all cases
the other. The "rank" variant skips the normal quantile and just centers
and scales the ranks to mean 0 / unit sample variance, which is the
moment normalization the asymptotic null assumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_phenotype
from .errors import InputError

TRANSFORMS = ("quantile", "rank", "none")


@dataclass(frozen=True)
class QuantileVector:
    """Transformed phenotype vector ready for the pairwise kernel."""

    q: np.ndarray
    transform: str
    n: int

    def __post_init__(self):
        q = np.ascontiguousarray(np.asarray(self.q, dtype=float))
        if q.ndim != 1 or q.size != self.n:
            raise InputError(f"q must be a length-{self.n} vector")
        if not np.all(np.isfinite(q)):
            raise InputError("transformed phenotype contains non-finite values")
        if self.transform not in TRANSFORMS:
            raise InputError(f"unknown transform {self.transform!r}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)


def rank_with_ties(y) -> np.ndarray:
    """Ranks in [1, n] with tie blocks sharing their average rank."""
    y = as_phenotype(y)
    return rankdata(y, method="average")


def quantile_transform(y, transform: str = "quantile") -> QuantileVector:
    """Map a phenotype to its kernel input vector.

    transform="quantile"
        Normal quantiles of shifted ranks, q = ndtri((rank - 0.5)/n).
        Every argument is strictly inside (0, 1), so q is always finite.
    transform="rank"
        Centered ranks scaled to unit sample variance.
    transform="none"
        The raw phenotype centered and scaled to unit sample variance.
        This deliberately skips the rank step; it exists as the
        non-robust baseline the robust transforms are compared against.

    Raises on a constant phenotype — there is no ordering information to
    test ("degenerate phenotype").
    """
    y = as_phenotype(y)
    if transform not in TRANSFORMS:
        raise InputError(f"transform must be one of {TRANSFORMS}, got {transform!r}")
    if np.all(y == y[0]):
        raise InputError("degenerate phenotype: all values are equal")
    n = y.size
    if transform == "none":
        centered = y - y.mean()
        q = centered / centered.std(ddof=1)
        return QuantileVector(q=q, transform="none", n=n)
    ranks = rankdata(y, method="average")
    if transform == "quantile":
        q = ndtri((ranks - 0.5) / n)
    else:
        centered = ranks - ranks.mean()
        q = centered / centered.std(ddof=1)
    return QuantileVector(q=q, transform=transform, n=n)


class RankNormalizer(TransformerMixin, BaseEstimator):
    """Column-wise rank transform with the estimator-API shape.

    Stateless (``fit`` only validates), so it can sit inside an sklearn
    pipeline ahead of any model that prefers rank-normalized targets or
    features.

    Parameters
    ----------
    method : {"quantile", "rank"}
        Same semantics as :func:`quantile_transform`.
    """

    def __init__(self, method: str = "quantile"):
        self.method = method

    def fit(self, X, y=None):
        if self.method not in ("quantile", "rank"):
            raise InputError(f"method must be 'quantile' or 'rank', got {self.method!r}")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InputError("RankNormalizer expects a vector or 2-d array")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "n_features_in_"):
            raise InputError("RankNormalizer is not fitted")
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[:, None]
        if X.shape[1] != self.n_features_in_:
            raise InputError(
                f"expected {self.n_features_in_} columns, got {X.shape[1]}"
            )
        out = np.column_stack(
            [quantile_transform(X[:, j], self.method).q for j in range(X.shape[1])]
        )
        return out[:, 0] if squeeze else out
