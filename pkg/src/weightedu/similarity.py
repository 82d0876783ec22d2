"""Genetic similarity matrices.

Two kernels are provided. The workhorse is a rare-variant-weighted
identity-by-state similarity

    w[i, j] = sum_p (2 - |g[i, p] - g[j, p]|) / (Y * sqrt(m_p * (1 - m_p)))

with m_p the folded minor allele frequency of variant p and
Y = sum_p 2 / sqrt(m_p * (1 - m_p)) the normalizer that pins identical
genotype rows at similarity 1. Sharing a rare allele therefore moves the
similarity far more than sharing a common one. The alternative kernel is
exp(-euclidean/scale) on the raw dosage rows.

Both return values in [0, 1] with a unit diagonal. Entries are computed
with dense O(n^2 P) matrix products — at the intended scale (a few
thousand samples) clarity beats sparsity tricks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ._validation import as_genotype_values
from .data import GenotypeMatrix, MafVector
from .errors import InputError

SIMILARITY_KINDS = ("weighted-ibs", "exp-distance")


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric n x n similarity with entries in [0, 1] and unit diagonal.

    The diagonal is never read by the test statistic but is fixed at 1 so
    that equal inputs always produce byte-equal matrices.
    """

    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InputError(f"similarity must be square, got shape {values.shape}")
        if values.shape[0] < 2:
            raise InputError("similarity needs at least 2 samples")
        if not np.all(np.isfinite(values)):
            raise InputError("similarity contains non-finite values")
        if not np.array_equal(values, values.T):
            raise InputError("similarity must be symmetric")
        if values.min() < 0.0 or values.max() > 1.0:
            raise InputError("similarity entries must lie in [0, 1]")
        if not np.allclose(np.diag(values), 1.0):
            raise InputError("similarity diagonal must be 1")
        if self.kind not in SIMILARITY_KINDS:
            raise InputError(f"unknown similarity kind {self.kind!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def offdiagonal(self) -> np.ndarray:
        """The i < j upper-triangle entries as a flat vector."""
        iu = np.triu_indices(self.n_samples, k=1)
        return self.values[iu]


def _complete_values(G, require_dosage: bool) -> np.ndarray:
    if isinstance(G, GenotypeMatrix):
        if not G.is_complete:
            raise InputError("genotype matrix has missing entries; impute before computing similarity")
        return np.asarray(G.values, dtype=float)
    return as_genotype_values(G, require_dosage=require_dosage)


def _folded_maf(maf, n_variants: int) -> np.ndarray:
    values = maf.maf if isinstance(maf, MafVector) else np.asarray(maf, dtype=float)
    if values.ndim != 1 or values.size != n_variants:
        raise InputError(f"expected {n_variants} maf values, got shape {np.shape(values)}")
    if np.any(values <= 0.0):
        raise InputError("monomorphic variant in similarity: every maf must be > 0")
    if np.any(values > 0.5 + 1e-12):
        raise InputError("maf must be folded to (0, 0.5]")
    return values


def weighted_ibs(G, maf) -> SimilarityMatrix:
    """Rare-variant-weighted IBS similarity.

    Parameters
    ----------
    G : GenotypeMatrix or (n, P) array
        Complete genotypes with entries in {0, 1, 2}.
    maf : MafVector or (P,) array
        Folded minor allele frequencies, strictly positive.

    Notes
    -----
    Rather than loop over pairs, the pairwise weighted Manhattan distance
    is assembled from two rank-threshold indicator products: with
    u_p = 1/sqrt(m_p(1-m_p)) and dosage values in {0, 1, 2},

        sum_p u_p |g_i - g_j| = r_i + r_j - 2 * (B1 U B1' + B2 U B2')[i, j]

    where B1 = [g >= 1], B2 = [g >= 2], U = diag(u) and r = G u. The
    similarity is then 1 - distance/Y. Exact for integer dosages.
    """
    values = _complete_values(G, require_dosage=True)
    n, p = values.shape
    m = _folded_maf(maf, p)

    u = 1.0 / np.sqrt(m * (1.0 - m))
    upsilon = 2.0 * u.sum()
    r = values @ u
    b1 = (values >= 1.0) * np.sqrt(u)
    b2 = (values >= 2.0) * np.sqrt(u)
    shared = b1 @ b1.T + b2 @ b2.T
    dist = r[:, None] + r[None, :] - 2.0 * shared
    w = 1.0 - dist / upsilon
    w = (w + w.T) / 2.0
    np.clip(w, 0.0, 1.0, out=w)
    np.fill_diagonal(w, 1.0)
    return SimilarityMatrix(values=w, kind="weighted-ibs")


def exp_distance_similarity(G, scale: float = 1.0) -> SimilarityMatrix:
    """Similarity exp(-D/scale) with D the Euclidean distance between rows.

    ``scale`` defaults to 1 so the bare exponential of the distance is
    recovered; larger scales flatten the kernel.
    """
    if not (np.isfinite(scale) and scale > 0):
        raise InputError(f"scale must be a positive number, got {scale!r}")
    values = _complete_values(G, require_dosage=False)
    dist = squareform(pdist(values, metric="euclidean"))
    w = np.exp(-dist / float(scale))
    np.fill_diagonal(w, 1.0)
    return SimilarityMatrix(values=w, kind="exp-distance")
