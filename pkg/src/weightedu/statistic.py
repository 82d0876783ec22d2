"""The weighted-U association statistic.

Given a similarity matrix W and a transformed phenotype vector Q, the
statistic contrasts a similarity-weighted U statistic against a rescaled
unweighted one:

    U_w  = (1/(n(n-1))) * sum_{i != j} w[i,j] * q_i * q_j
    U_uw = (1/(n(n-1))) * sum_{i != j} q_i * q_j
    T    = U_w - c * U_uw

with the scaling constant c chosen to minimize the L2 (mean) or L1
(median) distance between the off-diagonal similarities and the constant
kernel. Writing k[i,j] = w[i,j] - c off the diagonal and 0 on it, the
same statistic is the quadratic form

    T = Q' K Q / (n(n-1)),

which is the production code path; the component form is kept as an
independently-coded oracle for testing. A large positive T means that
genetically similar pairs also have similar (transformed) phenotypes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTestWarning, InputError
from .similarity import SimilarityMatrix
from .transform import QuantileVector

NORMS = ("L1", "L2")


@dataclass(frozen=True)
class CenteredWeightMatrix:
    """K = W - c off the diagonal, exactly zero on it."""

    values: np.ndarray
    c: float
    norm: str

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InputError(f"K must be square, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("K contains non-finite values")
        if not np.array_equal(values, values.T):
            raise InputError("K must be symmetric")
        if np.any(np.diag(values) != 0.0):
            raise InputError("K must have an exactly zero diagonal")
        if self.norm not in NORMS:
            raise InputError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not np.isfinite(self.c):
            raise InputError("c must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "c", float(self.c))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]


def _lower_median(values: np.ndarray) -> float:
    # For an even count any point between the two middle order statistics
    # minimizes the L1 objective; the lower one is used so the constant is
    # always an attained similarity value.
    idx = (values.size - 1) // 2
    return float(np.partition(values, idx)[idx])


def scaling_constant(W: SimilarityMatrix, norm: str = "L2") -> float:
    """Off-diagonal mean (L2) or lower median (L1) of the similarity.

    The balancing constant must be positive; if the off-diagonal center
    is 0 (possible only when many pairs have no similarity at all) it is
    clamped to the smallest positive off-diagonal value, with a warning.
    An entirely zero off-diagonal cannot be clamped and is left at 0 —
    downstream code then sees K = 0 and reports the degenerate p = 1.
    """
    if norm not in NORMS:
        raise InputError(f"norm must be one of {NORMS}, got {norm!r}")
    off = W.offdiagonal()
    c = float(off.mean()) if norm == "L2" else _lower_median(off)
    if c <= 0.0:
        positive = off[off > 0.0]
        if positive.size:
            c = float(positive.min())
            warnings.warn(
                f"off-diagonal {norm} center was 0; clamping c to the smallest "
                f"positive similarity {c:.3g}",
                DegenerateTestWarning,
                stacklevel=2,
            )
        else:
            c = 0.0
            warnings.warn(
                "all off-diagonal similarities are 0; no positive c exists and "
                "the test is degenerate",
                DegenerateTestWarning,
                stacklevel=2,
            )
    return c


def build_weight_matrix(W: SimilarityMatrix, c: float, norm: str = "L2") -> CenteredWeightMatrix:
    """Subtract c from the off-diagonal similarities; zero the diagonal."""
    if not np.isfinite(c):
        raise InputError("c must be finite")
    k = W.values - float(c)
    np.fill_diagonal(k, 0.0)
    k = (k + k.T) / 2.0
    return CenteredWeightMatrix(values=k, c=float(c), norm=norm)


def centered_weight_matrix(W: SimilarityMatrix, norm: str = "L2") -> CenteredWeightMatrix:
    """Convenience: scaling_constant + build_weight_matrix in one call."""
    return build_weight_matrix(W, scaling_constant(W, norm), norm=norm)


def _check_pair(n_k: int, Q: QuantileVector) -> np.ndarray:
    q = Q.q if isinstance(Q, QuantileVector) else np.asarray(Q, dtype=float)
    if q.ndim != 1 or q.size != n_k:
        raise InputError(f"dimension mismatch: K is {n_k}x{n_k} but Q has shape {q.shape}")
    return q


def wu_statistic(K: CenteredWeightMatrix, Q: QuantileVector) -> float:
    """The statistic as the quadratic form Q'KQ / (n(n-1))."""
    q = _check_pair(K.n_samples, Q)
    n = K.n_samples
    return float(q @ K.values @ q) / (n * (n - 1))


def u_components(W: SimilarityMatrix, Q: QuantileVector) -> tuple[float, float]:
    """(U_w, U_uw): the weighted and unweighted pair averages.

    Deliberately a separate derivation from :func:`wu_statistic`;
    ``U_w - c * U_uw`` must agree with the quadratic form to floating
    precision, and the test suite holds the two paths against each other.
    """
    q = _check_pair(W.n_samples, Q)
    n = W.n_samples
    pairs = n * (n - 1)
    total = float(q @ W.values @ q)
    diag = float(np.diag(W.values) @ (q * q))
    u_w = (total - diag) / pairs
    s = float(q.sum())
    u_uw = (s * s - float(q @ q)) / pairs
    return u_w, u_uw
