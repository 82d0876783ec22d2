"""Genotype, phenotype and covariate handling.

Covers TSV ingestion, minor-allele-frequency computation, random
imputation of missing genotypes, and frequency-based variant filtering.
All containers are immutable after construction so they can be shared
freely across parallel workers; imputation is the only randomized step
and is deterministic for a given seed.

File formats
------------
Genotype file
    Tab-separated. First row ``sample_id<TAB>var1<TAB>var2...``;
    each following row is a sample id and one token per variant,
    each token in ``{0, 1, 2, NA}``.
Phenotype file
    Two tab-separated columns with a header row: ``sample_id<TAB>value``.
Covariate file
    Header row ``sample_id<TAB>name1<TAB>...``, then one row per sample
    with numeric values. An intercept column is added by the loaders'
    consumers, never stored in the file.

Sample order is reconciled by id, never by position: see
:func:`align_by_sample`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_rng
from .errors import InputError

_GENOTYPE_TOKENS = {"0": 0, "1": 1, "2": 2}
_MISSING_TOKEN = "NA"


@dataclass(frozen=True)
class GenotypeMatrix:
    """An n x P matrix of genotype dosages with an explicit missingness mask.

    Attributes:
        values: (n, P) int matrix; entries in {0, 1, 2}. Cells flagged in
            ``missing`` hold 0 but carry no information.
        missing: (n, P) boolean mask, True where the genotype is unknown.
        variant_ids: P unique variant labels.
        sample_ids: n unique sample labels.
    """

    values: np.ndarray
    missing: np.ndarray
    variant_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.int16))
        missing = np.ascontiguousarray(np.asarray(self.missing, dtype=bool))
        if values.ndim != 2:
            raise InputError(f"genotype values must be 2-d, got shape {values.shape}")
        n, p = values.shape
        if n < 2 or p < 1:
            raise InputError(f"genotype matrix needs n >= 2 and P >= 1, got {n}x{p}")
        if missing.shape != values.shape:
            raise InputError("missingness mask shape does not match genotype values")
        observed = values[~missing]
        if observed.size and (observed.min() < 0 or observed.max() > 2):
            raise InputError("non-missing genotype entries must be in {0, 1, 2}")
        variant_ids = tuple(str(v) for v in self.variant_ids)
        sample_ids = tuple(str(s) for s in self.sample_ids)
        if len(variant_ids) != p:
            raise InputError(f"got {len(variant_ids)} variant ids for {p} variants")
        if len(sample_ids) != n:
            raise InputError(f"got {len(sample_ids)} sample ids for {n} samples")
        if len(set(variant_ids)) != p:
            raise InputError("duplicate variant ids")
        if len(set(sample_ids)) != n:
            raise InputError("duplicate sample ids")
        values.setflags(write=False)
        missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "variant_ids", variant_ids)
        object.__setattr__(self, "sample_ids", sample_ids)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_variants(self) -> int:
        return self.values.shape[1]

    @property
    def is_complete(self) -> bool:
        return not self.missing.any()

    def subset_variants(self, keep: np.ndarray) -> "GenotypeMatrix":
        """Return a copy restricted to the variant columns in ``keep``."""
        keep = np.asarray(keep)
        ids = tuple(self.variant_ids[j] for j in keep)
        return GenotypeMatrix(self.values[:, keep], self.missing[:, keep], ids, self.sample_ids)


@dataclass(frozen=True)
class MafVector:
    """Per-variant allele frequencies.

    ``maf`` is the folded minor-allele frequency min(f, 1-f) in [0, 0.5];
    this is what the similarity weights consume. ``alt_frequency`` is the
    unfolded alternate-allele frequency f in [0, 1], which is what
    Hardy-Weinberg imputation needs (Binomial(2, f) draws are not
    symmetric under folding).
    """

    maf: np.ndarray
    alt_frequency: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        maf = np.asarray(self.maf, dtype=float)
        if maf.ndim != 1:
            raise InputError("maf must be a 1-d vector")
        if not np.all(np.isfinite(maf)):
            raise InputError("maf contains non-finite values")
        if maf.size and (maf.min() < 0 or maf.max() > 0.5 + 1e-12):
            raise InputError("folded maf must lie in [0, 0.5]")
        alt = self.alt_frequency
        if alt is None:
            alt = maf.copy()
        alt = np.asarray(alt, dtype=float)
        if alt.shape != maf.shape:
            raise InputError("alt_frequency must align with maf")
        if alt.size and (alt.min() < 0 or alt.max() > 1):
            raise InputError("alt_frequency must lie in [0, 1]")
        if alt.size and not np.allclose(np.minimum(alt, 1 - alt), maf, atol=1e-9):
            raise InputError("alt_frequency does not fold to the given maf")
        maf.setflags(write=False)
        alt.setflags(write=False)
        object.__setattr__(self, "maf", maf)
        object.__setattr__(self, "alt_frequency", alt)

    def __len__(self) -> int:
        return self.maf.size


def _read_nonempty_lines(path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = handle.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    lines = [line.rstrip("\n").rstrip("\r") for line in raw.split("\n")]
    return [line for line in lines if line.strip() != ""]


def load_genotypes(path) -> GenotypeMatrix:
    """Parse a genotype TSV into a :class:`GenotypeMatrix`.

    Raises :class:`InputError` on a row whose width disagrees with the
    header, on any token outside ``{0, 1, 2, NA}``, and on duplicate
    sample or variant ids.
    """
    lines = _read_nonempty_lines(path)
    if len(lines) < 2:
        raise InputError(f"{path}: expected a header row and at least one sample row")
    header = lines[0].split("\t")
    if len(header) < 2:
        raise InputError(f"{path}: header must name at least one variant")
    variant_ids = header[1:]
    n_var = len(variant_ids)

    sample_ids: list[str] = []
    rows: list[list[int]] = []
    mask_rows: list[list[bool]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != n_var + 1:
            raise InputError(
                f"{path}:{lineno}: row width mismatch — expected {n_var + 1} fields, got {len(fields)}"
            )
        sample_ids.append(fields[0])
        row = []
        mask = []
        for tok in fields[1:]:
            tok = tok.strip()
            if tok == _MISSING_TOKEN:
                row.append(0)
                mask.append(True)
            elif tok in _GENOTYPE_TOKENS:
                row.append(_GENOTYPE_TOKENS[tok])
                mask.append(False)
            else:
                raise InputError(
                    f"{path}:{lineno}: genotype token {tok!r} is not one of 0, 1, 2, NA"
                )
        rows.append(row)
        mask_rows.append(mask)

    return GenotypeMatrix(
        values=np.array(rows, dtype=np.int16),
        missing=np.array(mask_rows, dtype=bool),
        variant_ids=tuple(variant_ids),
        sample_ids=tuple(sample_ids),
    )


def fold_frequency(f) -> np.ndarray:
    """Fold alternate-allele frequencies onto [0, 0.5]: min(f, 1 - f)."""
    f = np.asarray(f, dtype=float)
    return np.minimum(f, 1.0 - f)


def compute_maf(G: GenotypeMatrix) -> MafVector:
    """Estimate per-variant allele frequencies from the non-missing entries.

    Returns folded minor-allele frequencies (monomorphic variants are
    reported with maf 0, not dropped — filtering is a separate step).
    Raises on a variant with no observed genotypes at all.
    """
    observed = ~G.missing
    n_obs = observed.sum(axis=0)
    if np.any(n_obs == 0):
        j = int(np.argmax(n_obs == 0))
        raise InputError(
            f"variant {G.variant_ids[j]!r} has no observed genotypes; frequency is undefined"
        )
    alt_counts = np.where(observed, G.values, 0).sum(axis=0, dtype=float)
    f = alt_counts / (2.0 * n_obs)
    return MafVector(maf=fold_frequency(f), alt_frequency=f)


def impute_missing(G: GenotypeMatrix, maf: MafVector, seed) -> GenotypeMatrix:
    """Fill missing genotypes with Binomial(2, f_p) Hardy-Weinberg draws.

    f_p is the unfolded alternate-allele frequency carried by ``maf``.
    A complete matrix is returned untouched, which also makes the
    operation idempotent. Deterministic for a given ``seed``.
    """
    if len(maf) != G.n_variants:
        raise InputError(f"maf has {len(maf)} entries for {G.n_variants} variants")
    if G.is_complete:
        return G
    if np.any((~G.missing).sum(axis=0) == 0):
        j = int(np.argmax((~G.missing).sum(axis=0) == 0))
        raise InputError(
            f"variant {G.variant_ids[j]!r} is entirely missing; cannot impute without a frequency"
        )
    rng = as_rng(seed)
    rows, cols = np.nonzero(G.missing)
    draws = rng.binomial(2, maf.alt_frequency[cols])
    values = np.array(G.values, dtype=np.int16)
    values[rows, cols] = draws
    return GenotypeMatrix(
        values=values,
        missing=np.zeros_like(G.missing),
        variant_ids=G.variant_ids,
        sample_ids=G.sample_ids,
    )


def filter_by_maf(G: GenotypeMatrix, maf: MafVector, threshold: float) -> GenotypeMatrix:
    """Keep variants with 0 < maf < threshold.

    Monomorphic variants (maf 0) are always dropped: the rare-variant
    weight 1/sqrt(maf*(1-maf)) is undefined for them. Raises when
    nothing survives.
    """
    threshold = float(threshold)
    if not (0.0 < threshold <= 0.5):
        raise InputError(f"maf threshold must lie in (0, 0.5], got {threshold}")
    if len(maf) != G.n_variants:
        raise InputError(f"maf has {len(maf)} entries for {G.n_variants} variants")
    keep = np.nonzero((maf.maf > 0.0) & (maf.maf < threshold))[0]
    if keep.size == 0:
        raise InputError("no polymorphic variants below threshold")
    return G.subset_variants(keep)


def load_phenotype(path) -> tuple[list[str], np.ndarray]:
    """Read a two-column phenotype TSV; returns (sample_ids, values).

    Missing or non-numeric values are rejected — phenotypes are expected
    complete.
    """
    lines = _read_nonempty_lines(path)
    if len(lines) < 2:
        raise InputError(f"{path}: expected a header row and at least one sample row")
    ids: list[str] = []
    values: list[float] = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 2:
            raise InputError(f"{path}:{lineno}: expected 2 columns, got {len(fields)}")
        try:
            value = float(fields[1])
        except ValueError:
            raise InputError(f"{path}:{lineno}: phenotype value {fields[1]!r} is not numeric") from None
        if not np.isfinite(value):
            raise InputError(f"{path}:{lineno}: phenotype value must be finite")
        ids.append(fields[0])
        values.append(value)
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate sample ids")
    return ids, np.array(values, dtype=float)


def load_covariates(path) -> tuple[list[str], np.ndarray, list[str]]:
    """Read a covariate TSV; returns (sample_ids, X, covariate_names).

    X has one column per named covariate — no intercept; downstream code
    prepends it. Missing values are rejected.
    """
    lines = _read_nonempty_lines(path)
    if len(lines) < 2:
        raise InputError(f"{path}: expected a header row and at least one sample row")
    header = lines[0].split("\t")
    if len(header) < 2:
        raise InputError(f"{path}: header must name at least one covariate")
    names = header[1:]
    ids: list[str] = []
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise InputError(
                f"{path}:{lineno}: expected {len(header)} columns, got {len(fields)}"
            )
        try:
            row = [float(tok) for tok in fields[1:]]
        except ValueError:
            raise InputError(f"{path}:{lineno}: covariates must be numeric") from None
        if not np.all(np.isfinite(row)):
            raise InputError(f"{path}:{lineno}: covariate values must be finite")
        ids.append(fields[0])
        rows.append(row)
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate sample ids")
    return ids, np.array(rows, dtype=float), names


def write_genotypes(G: GenotypeMatrix, path) -> None:
    """Serialize a GenotypeMatrix to the TSV format load_genotypes reads."""
    lines = ["\t".join(("sample_id",) + tuple(G.variant_ids))]
    for i, sid in enumerate(G.sample_ids):
        tokens = [
            _MISSING_TOKEN if G.missing[i, j] else str(int(G.values[i, j]))
            for j in range(G.n_variants)
        ]
        lines.append("\t".join([sid] + tokens))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def write_phenotype(sample_ids, values, path) -> None:
    """Serialize a phenotype vector to the two-column TSV format."""
    values = np.asarray(values, dtype=float)
    lines = ["sample_id\tvalue"]
    for sid, val in zip(sample_ids, values):
        lines.append(f"{sid}\t{float(val)!r}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def write_covariates(sample_ids, X, names, path) -> None:
    """Serialize a covariate matrix (no intercept column) to TSV."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(sample_ids) or X.shape[1] != len(names):
        raise InputError(
            f"covariate matrix {X.shape} does not match {len(sample_ids)} samples "
            f"and {len(names)} names"
        )
    lines = ["\t".join(["sample_id"] + list(names))]
    for i, sid in enumerate(sample_ids):
        lines.append("\t".join([sid] + [repr(float(v)) for v in X[i]]))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def align_by_sample(sample_ids, other_ids, values: np.ndarray, what: str) -> np.ndarray:
    """Reorder ``values`` (indexed by ``other_ids``) to match ``sample_ids``.

    Every genotyped sample must be present; extra rows in the other file
    are ignored.
    """
    index = {sid: i for i, sid in enumerate(other_ids)}
    order = []
    for sid in sample_ids:
        if sid not in index:
            raise InputError(f"sample {sid!r} is missing from the {what} file")
        order.append(index[sid])
    return np.asarray(values)[np.array(order)]
