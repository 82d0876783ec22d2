"""Bundled reference datasets and their precomputed oracle values.

Four small datasets (200 samples, 60 rare polymorphic variants each)
ship with the package so the full pipeline can be exercised — and the
asymptotic machinery validated — without any external data:

* ``null_gaussian``        — pure noise phenotype, no genetic signal;
* ``planted_gaussian``     — Gaussian noise plus a genetic effect scaled
  until the high-B permutation p-value clears 1e-3;
* ``planted_cauchy``       — the same construction under Cauchy noise;
* ``binary_covariates``    — logistic case/control with two covariates
  and a planted effect (covariate-adjusted analysis), scaled until the
  permutation p clears 1e-2.

Every dataset's oracle record stores the statistic, the asymptotic
p-value and a permutation p-value at B = 100000. The permutation value
is the ground truth here: it is model-free, so agreement between the
two columns validates the mixture-of-chi-squared path end to end.
Regenerating the suite from the recorded seed reproduces every file and
every record byte for byte; consumers must read expected values from
the records, never hard-code them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ._validation import check_seed
from .data import (
    GenotypeMatrix,
    compute_maf,
    fold_frequency,
    write_covariates,
    write_genotypes,
    write_phenotype,
)
from .errors import InputError
from .nulldist import asymptotic_pvalue, permutation_pvalue
from .projection import adjusted_test, project_residuals
from .similarity import weighted_ibs
from .simulate import DEFAULT_MAF_BIN_MASS, DEFAULT_MAF_BREAKS, MethodConfig, draw_maf_spectrum
from .statistic import centered_weight_matrix
from .transform import quantile_transform

TOY_DATASETS = ("null_gaussian", "planted_gaussian", "planted_cauchy", "binary_covariates")

ORACLE_PERMUTATIONS = 100_000

_COVARIATE_NAMES = ("x1", "x2")


@dataclass(frozen=True)
class OracleRecord:
    """Reference result for one bundled dataset."""

    dataset: str
    method: str
    statistic: float
    p_asymptotic: float
    p_permutation: float
    n_permutations: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _rare_polymorphic_block(stream, n: int = 200, want: int = 60) -> GenotypeMatrix:
    """Genotypes whose every column is polymorphic with frequency < 0.03.

    Columns are drawn from the synthetic spectrum in fixed-size batches
    and kept only if the realized sample frequency lands in (0, 0.03),
    so the result is deterministic for a given stream.
    """
    rng = np.random.default_rng(stream)
    kept: list[np.ndarray] = []
    while len(kept) < want:
        maf = draw_maf_spectrum(rng, 120, DEFAULT_MAF_BREAKS, DEFAULT_MAF_BIN_MASS)
        block = rng.binomial(2, maf, size=(n, 120)).astype(np.int16)
        freq = fold_frequency(block.mean(axis=0) / 2.0)
        for j in np.nonzero((freq > 0.0) & (freq < 0.03))[0]:
            kept.append(block[:, j])
            if len(kept) == want:
                break
    values = np.column_stack(kept)
    return GenotypeMatrix(
        values=values,
        missing=np.zeros_like(values, dtype=bool),
        variant_ids=tuple(f"v{j + 1:05d}" for j in range(want)),
        sample_ids=tuple(f"s{i + 1:05d}" for i in range(n)),
    )


def _signal_direction(G: GenotypeMatrix, stream) -> np.ndarray:
    """A fixed genetic signal: random effects on half the variants,
    aggregated and standardized so the planted scale is in noise units."""
    rng = np.random.default_rng(stream)
    p = G.n_variants
    chosen = rng.choice(p, size=p // 2, replace=False)
    beta = np.zeros(p)
    beta[chosen] = rng.normal(0.0, 1.0, size=chosen.size)
    g = np.asarray(G.values, dtype=float) @ beta
    sd = g.std()
    if sd == 0.0:
        raise InputError("degenerate signal direction: genetic score is constant")
    return (g - g.mean()) / sd


def _analyze(G: GenotypeMatrix, y: np.ndarray, X, perm_seed: int):
    """(statistic, p_asymptotic, p_permutation) with the default method."""
    maf = compute_maf(G)
    W = weighted_ibs(G, maf)
    K = centered_weight_matrix(W, norm="L2")
    Q = quantile_transform(y, transform="quantile")
    if X is None:
        result = asymptotic_pvalue(K, Q)
        perm_q = Q
    else:
        result, _ = adjusted_test(K, Q, X)
        perm_q, _ = project_residuals(Q, X)
    p_perm = permutation_pvalue(K, perm_q, ORACLE_PERMUTATIONS, perm_seed)
    return result.statistic, result.p_asymptotic, p_perm


def _escalate(build_y, G: GenotypeMatrix, X, perm_seed: int, target: float, start: float = 0.25):
    """Grow the planted-effect scale until the permutation p beats target.

    The noise and the signal direction are fixed; only the scalar scale
    changes between attempts, so the loop is deterministic. The scale
    grows by a factor 1.6 per attempt and the construction errors out
    rather than loop forever if 40 attempts are not enough.
    """
    scale = start
    for _ in range(40):
        y = build_y(scale)
        stat, p_asym, p_perm = _analyze(G, y, X, perm_seed)
        if p_perm < target:
            return y, scale, (stat, p_asym, p_perm)
        scale *= 1.6
    raise InputError(f"planted effect failed to reach permutation p < {target} after 40 escalations")


def _perm_seed(stream) -> int:
    return int(stream.generate_state(1)[0])


def generate_toy_suite(seed: int = 2, out_dir=None) -> tuple[OracleRecord, ...]:
    """Write the four datasets plus ``oracles.json`` into ``out_dir``.

    Deterministic: the master seed drives named substreams per dataset,
    and rerunning with the same seed rewrites identical bytes. The
    default seed is the one the bundled files were generated with —
    chosen so the null dataset's own p-value lands mid-range, where a
    bundled no-signal example belongs.
    """
    seed = check_seed(seed)
    out = Path(out_dir) if out_dir is not None else _data_dir()
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    streams = dict(zip(TOY_DATASETS, root.spawn(len(TOY_DATASETS))))
    records: list[OracleRecord] = []

    # (a) pure-noise Gaussian phenotype
    geno_s, noise_s, perm_s = streams["null_gaussian"].spawn(3)
    G = _rare_polymorphic_block(geno_s)
    y = np.random.default_rng(noise_s).standard_normal(G.n_samples)
    stat, p_asym, p_perm = _analyze(G, y, None, _perm_seed(perm_s))
    _write_dataset(out, "null_gaussian", G, y, None)
    records.append(_record("null_gaussian", False, stat, p_asym, p_perm, seed))

    # (b) Gaussian noise + planted effect, escalated to permutation p < 1e-3
    geno_s, dir_s, noise_s, perm_s = streams["planted_gaussian"].spawn(4)
    G = _rare_polymorphic_block(geno_s)
    signal = _signal_direction(G, dir_s)
    noise = np.random.default_rng(noise_s).standard_normal(G.n_samples)
    y, _, (stat, p_asym, p_perm) = _escalate(
        lambda s: s * signal + noise, G, None, _perm_seed(perm_s), target=1e-3
    )
    _write_dataset(out, "planted_gaussian", G, y, None)
    records.append(_record("planted_gaussian", False, stat, p_asym, p_perm, seed))

    # (c) Cauchy noise + planted effect
    geno_s, dir_s, noise_s, perm_s = streams["planted_cauchy"].spawn(4)
    G = _rare_polymorphic_block(geno_s)
    signal = _signal_direction(G, dir_s)
    noise = np.random.default_rng(noise_s).standard_cauchy(G.n_samples)
    y, _, (stat, p_asym, p_perm) = _escalate(
        lambda s: s * signal + noise, G, None, _perm_seed(perm_s), target=1e-3
    )
    _write_dataset(out, "planted_cauchy", G, y, None)
    records.append(_record("planted_cauchy", False, stat, p_asym, p_perm, seed))

    # (d) logistic case/control with covariates, adjusted analysis
    geno_s, dir_s, cov_s, noise_s, perm_s = streams["binary_covariates"].spawn(5)
    G = _rare_polymorphic_block(geno_s)
    signal = _signal_direction(G, dir_s)
    cov_rng = np.random.default_rng(cov_s)
    x1 = cov_rng.binomial(1, 0.3, size=G.n_samples).astype(float)
    x2 = cov_rng.standard_normal(G.n_samples)
    X = np.column_stack([x1, x2])
    uniforms = np.random.default_rng(noise_s).random(G.n_samples)

    def build_binary(s: float) -> np.ndarray:
        from scipy.special import expit

        prob = expit(0.3 * x1 + 0.3 * x2 + s * signal)
        return (uniforms < prob).astype(float)

    y, _, (stat, p_asym, p_perm) = _escalate(
        build_binary, G, X, _perm_seed(perm_s), target=1e-2
    )
    _write_dataset(out, "binary_covariates", G, y, X)
    records.append(_record("binary_covariates", True, stat, p_asym, p_perm, seed))

    payload = {"records": [r.to_dict() for r in records]}
    (out / "oracles.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return tuple(records)


def _record(name: str, adjusted: bool, stat: float, p_asym: float, p_perm: float, seed: int) -> OracleRecord:
    method = MethodConfig(adjusted=adjusted)
    return OracleRecord(
        dataset=name,
        method=method.name,
        statistic=stat,
        p_asymptotic=p_asym,
        p_permutation=p_perm,
        n_permutations=ORACLE_PERMUTATIONS,
        seed=seed,
    )


def _write_dataset(out: Path, name: str, G: GenotypeMatrix, y: np.ndarray, X) -> None:
    write_genotypes(G, out / f"{name}.genotypes.tsv")
    write_phenotype(G.sample_ids, y, out / f"{name}.phenotype.tsv")
    if X is not None:
        write_covariates(G.sample_ids, X, _COVARIATE_NAMES, out / f"{name}.covariates.tsv")


def _data_dir() -> Path:
    return Path(str(resources.files("weightedu.datasets")))


def toy_paths(name: str) -> dict[str, Path]:
    """Paths of one bundled dataset's files, keyed genotypes/phenotype/covariates."""
    if name not in TOY_DATASETS:
        raise InputError(f"unknown toy dataset {name!r}; choose from {TOY_DATASETS}")
    base = _data_dir()
    paths = {
        "genotypes": base / f"{name}.genotypes.tsv",
        "phenotype": base / f"{name}.phenotype.tsv",
    }
    cov = base / f"{name}.covariates.tsv"
    if cov.exists():
        paths["covariates"] = cov
    return paths


def load_oracles() -> tuple[OracleRecord, ...]:
    """The bundled oracle records, in dataset order."""
    text = (_data_dir() / "oracles.json").read_text(encoding="utf-8")
    payload = json.loads(text)
    return tuple(OracleRecord(**rec) for rec in payload["records"])
