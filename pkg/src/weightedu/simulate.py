"""Simulation harness: type-I error and power studies.

Generates genotype/phenotype replicates for a configurable scenario and
reports the rejection rate of one or more method configurations on the
same replicates. Everything is deterministic for a given master seed:
replicate i derives its generator, effect and phenotype streams from
``SeedSequence((seed, i))``, so replicates can run in any order or in
parallel without changing a single byte of the report.

Genotypes come from either a synthetic allele-frequency spectrum (rare-
skewed, piecewise log-uniform; the default bin masses put ~35% of
variants below frequency 0.001, ~69% below 0.01 and ~80% below 0.03) or
a user-supplied genotype pool file, from which rows are resampled
without replacement and a contiguous variant window is cut. Synthetic
variants are independent; linkage structure only enters through a pool
file.

Effect-size hyperparameters are plain configuration with documented
defaults — the defaults here were tuned so the bundled studies show a
clear power gradient over n in {50, ..., 500} while staying cheap; they
are not estimates of anything.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

import joblib

from ._validation import as_rng, check_seed
from .data import GenotypeMatrix, compute_maf, filter_by_maf, impute_missing, load_genotypes
from .errors import InputError, WeightedUError
from .nulldist import _null_reference, _reference_tail, mixture_tail_probability, scaled_eigenvalues
from .projection import project_residuals, projected_kernel
from .similarity import SIMILARITY_KINDS, exp_distance_similarity, weighted_ibs
from .statistic import NORMS, centered_weight_matrix, wu_statistic
from .transform import TRANSFORMS, quantile_transform

PHENOTYPE_FAMILIES = ("gaussian", "binary-logistic", "student-t-2df", "cauchy")
EFFECT_MODES = ("null", "mixed-direction", "deleterious-majority")
POOL_SOURCES = ("synthetic", "file")

#: Variants below this sample frequency are eligible to carry an effect.
FUNCTIONAL_MAF = 0.03

#: Piecewise log-uniform spectrum: edges and the probability mass of each
#: bin. Tuned against the rare-variant fractions quoted above.
DEFAULT_MAF_BREAKS = (4.5e-4, 1e-3, 1e-2, 0.03, 0.499)
DEFAULT_MAF_BIN_MASS = (0.348, 0.343, 0.109, 0.200)


@dataclass(frozen=True)
class Scenario:
    """One simulation setting.

    ``effect_mode`` fixes the sign structure of the per-variant effects:
    "null" means no effects at all, "mixed-direction" draws them from a
    zero-mean normal (half harmful, half protective on average — so
    ``mu_beta`` must be 0), "deleterious-majority" requires a positive
    ``mu_beta`` so most effects share a sign. ``pct_functional`` is the
    fraction of rare (frequency < 0.03) variants that carry an effect.

    ``sigma`` scales the Gaussian noise only; the Student-t family uses
    raw t(2) noise and the Cauchy family uses scale ``b``. ``alpha`` are
    the two covariate coefficients used when ``with_covariates`` is on
    (covariates are x1 ~ Bernoulli(0.3) and x2 ~ standard normal).
    """

    phenotype_family: str = "gaussian"
    effect_mode: str = "null"
    pct_functional: float = 0.0
    n: int = 200
    n_variants: int = 200
    mu_beta: float = 0.0
    sigma_beta: float = 0.25
    mu: float = 0.0
    sigma: float = 1.0
    b: float = 1.0
    with_covariates: bool = False
    alpha: tuple[float, float] = (0.5, 0.5)
    replicates: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.phenotype_family not in PHENOTYPE_FAMILIES:
            raise InputError(
                f"phenotype_family must be one of {PHENOTYPE_FAMILIES}, "
                f"got {self.phenotype_family!r}"
            )
        if self.effect_mode not in EFFECT_MODES:
            raise InputError(f"effect_mode must be one of {EFFECT_MODES}, got {self.effect_mode!r}")
        if not (0.0 <= float(self.pct_functional) <= 0.5):
            raise InputError(f"pct_functional must lie in [0, 0.5], got {self.pct_functional}")
        if int(self.n) < 2:
            raise InputError(f"n must be at least 2, got {self.n}")
        if int(self.n_variants) < 1:
            raise InputError(f"n_variants must be at least 1, got {self.n_variants}")
        if int(self.replicates) < 1:
            raise InputError(f"replicates must be at least 1, got {self.replicates}")
        for name in ("sigma_beta", "sigma", "b"):
            if not (float(getattr(self, name)) > 0.0):
                raise InputError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.effect_mode == "mixed-direction" and float(self.mu_beta) != 0.0:
            raise InputError("mixed-direction effects require mu_beta = 0")
        if self.effect_mode == "deleterious-majority" and not (float(self.mu_beta) > 0.0):
            raise InputError("deleterious-majority effects require mu_beta > 0")
        alpha = tuple(float(a) for a in self.alpha)
        if len(alpha) != 2:
            raise InputError(f"alpha must hold exactly 2 covariate coefficients, got {len(alpha)}")
        object.__setattr__(self, "pct_functional", float(self.pct_functional))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "n_variants", int(self.n_variants))
        object.__setattr__(self, "mu_beta", float(self.mu_beta))
        object.__setattr__(self, "sigma_beta", float(self.sigma_beta))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "with_covariates", bool(self.with_covariates))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "replicates", int(self.replicates))
        object.__setattr__(self, "seed", check_seed(self.seed))

    def label(self) -> str:
        cov = "cov" if self.with_covariates else "nocov"
        return (
            f"{self.phenotype_family}|{self.effect_mode}"
            f"|pct={self.pct_functional:g}|n={self.n}|P={self.n_variants}|{cov}"
        )


@dataclass(frozen=True)
class GenotypePool:
    """Where replicate genotypes come from.

    source="synthetic": per-variant allele frequencies are drawn from the
    piecewise log-uniform spectrum given by ``maf_breaks``/``maf_bin_mass``
    and genotypes are Binomial(2, frequency) — independent variants.

    source="file": ``path`` names a genotype TSV to resample — rows
    without replacement, variants as one contiguous window.
    """

    source: str = "synthetic"
    path: str | None = None
    maf_breaks: tuple[float, ...] = DEFAULT_MAF_BREAKS
    maf_bin_mass: tuple[float, ...] = DEFAULT_MAF_BIN_MASS

    def __post_init__(self):
        if self.source not in POOL_SOURCES:
            raise InputError(f"pool source must be one of {POOL_SOURCES}, got {self.source!r}")
        if self.source == "file":
            if not self.path:
                raise InputError("file-backed pool needs a path")
            return
        breaks = tuple(float(x) for x in self.maf_breaks)
        mass = tuple(float(x) for x in self.maf_bin_mass)
        if len(breaks) < 2 or len(mass) != len(breaks) - 1:
            raise InputError("need len(maf_breaks) == len(maf_bin_mass) + 1 >= 2")
        if any(b <= 0 for b in breaks) or breaks[-1] > 0.5:
            raise InputError("maf_breaks must lie in (0, 0.5]")
        if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise InputError("maf_breaks must be strictly increasing")
        if any(m < 0 for m in mass) or abs(sum(mass) - 1.0) > 1e-9:
            raise InputError("maf_bin_mass must be nonnegative and sum to 1")
        object.__setattr__(self, "maf_breaks", breaks)
        object.__setattr__(self, "maf_bin_mass", mass)


@functools.lru_cache(maxsize=8)
def _load_pool(path: str) -> GenotypeMatrix:
    return load_genotypes(path)


def draw_maf_spectrum(rng: np.random.Generator, size: int, breaks, mass) -> np.ndarray:
    """Sample allele frequencies from the piecewise log-uniform spectrum."""
    breaks = np.asarray(breaks, dtype=float)
    mass = np.asarray(mass, dtype=float)
    bins = rng.choice(mass.size, size=size, p=mass)
    lo = np.log(breaks[bins])
    hi = np.log(breaks[bins + 1])
    return np.exp(lo + rng.random(size) * (hi - lo))


def sample_genotypes(pool: GenotypePool, n: int, n_variants: int, seed) -> GenotypeMatrix:
    """Draw an n x n_variants genotype matrix from the pool.

    Synthetic mode can produce monomorphic columns (a rare variant may
    simply not appear in a small sample); frequency filtering downstream
    removes them, mirroring what happens with real sequence data.
    """
    n = int(n)
    n_variants = int(n_variants)
    if n < 2:
        raise InputError(f"need at least 2 samples, got {n}")
    if n_variants < 1:
        raise InputError(f"need at least 1 variant, got {n_variants}")
    rng = as_rng(seed)
    if pool.source == "synthetic":
        maf = draw_maf_spectrum(rng, n_variants, pool.maf_breaks, pool.maf_bin_mass)
        values = rng.binomial(2, maf, size=(n, n_variants)).astype(np.int16)
        return GenotypeMatrix(
            values=values,
            missing=np.zeros((n, n_variants), dtype=bool),
            variant_ids=tuple(f"v{j + 1:05d}" for j in range(n_variants)),
            sample_ids=tuple(f"s{i + 1:05d}" for i in range(n)),
        )
    mat = _load_pool(str(pool.path))
    if mat.n_samples < n:
        raise InputError(f"pool holds {mat.n_samples} samples but {n} were requested")
    if mat.n_variants < n_variants:
        raise InputError(f"pool holds {mat.n_variants} variants but {n_variants} were requested")
    rows = np.sort(rng.choice(mat.n_samples, size=n, replace=False))
    start = int(rng.integers(0, mat.n_variants - n_variants + 1))
    cols = np.arange(start, start + n_variants)
    return GenotypeMatrix(
        values=mat.values[rows][:, cols],
        missing=mat.missing[rows][:, cols],
        variant_ids=tuple(mat.variant_ids[j] for j in cols),
        sample_ids=tuple(mat.sample_ids[i] for i in rows),
    )


def draw_effects(G: GenotypeMatrix, scenario: Scenario, seed) -> np.ndarray:
    """Per-variant effect sizes.

    Only variants with sample frequency below :data:`FUNCTIONAL_MAF` are
    eligible; a uniformly random subset of round(pct_functional * count)
    of them receives iid N(mu_beta, sigma_beta^2) effects, everything
    else is 0. The "null" mode returns the zero vector without touching
    the generator.
    """
    p = G.n_variants
    if scenario.effect_mode == "null":
        return np.zeros(p)
    rng = as_rng(seed)
    maf = compute_maf(G).maf
    candidates = np.nonzero(maf < FUNCTIONAL_MAF)[0]
    if candidates.size == 0:
        if scenario.pct_functional > 0:
            raise InputError(
                f"no variants below frequency {FUNCTIONAL_MAF} available to carry effects"
            )
        return np.zeros(p)
    count = int(math.floor(scenario.pct_functional * candidates.size + 0.5))
    beta = np.zeros(p)
    if count:
        chosen = rng.choice(candidates, size=count, replace=False)
        beta[chosen] = rng.normal(scenario.mu_beta, scenario.sigma_beta, size=count)
    return beta


def simulate_phenotype(G: GenotypeMatrix, beta: np.ndarray, scenario: Scenario, seed):
    """Phenotype (and covariates, if configured) for one replicate.

    Returns (y, X) with X = None when the scenario has no covariates.
    The generator order is fixed — covariates first, then noise — so a
    scenario with covariates is reproducible independent of the family.
    """
    if not G.is_complete:
        raise InputError("simulate_phenotype needs complete genotypes")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (G.n_variants,):
        raise InputError(
            f"effect vector has shape {beta.shape}, expected ({G.n_variants},)"
        )
    rng = as_rng(seed)
    n = G.n_samples
    eta = scenario.mu + np.asarray(G.values, dtype=float) @ beta
    X = None
    if scenario.with_covariates:
        x1 = rng.binomial(1, 0.3, size=n).astype(float)
        x2 = rng.standard_normal(n)
        X = np.column_stack([x1, x2])
        eta = eta + X @ np.asarray(scenario.alpha, dtype=float)
    family = scenario.phenotype_family
    if family == "gaussian":
        y = eta + scenario.sigma * rng.standard_normal(n)
    elif family == "student-t-2df":
        y = eta + rng.standard_t(2, size=n)
    elif family == "cauchy":
        y = eta + scenario.b * rng.standard_cauchy(n)
    elif family == "binary-logistic":
        y = rng.binomial(1, expit(eta)).astype(float)
    else:  # pragma: no cover - enum enforced at construction
        raise InputError(f"unknown phenotype family {family!r}")
    return y, X


@dataclass(frozen=True)
class MethodConfig:
    """One analysis recipe to run on each replicate."""

    transform: str = "quantile"
    c_norm: str = "L2"
    adjusted: bool = False
    kernel: str = "weighted-ibs"
    scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise InputError(f"transform must be one of {TRANSFORMS}, got {self.transform!r}")
        if self.c_norm not in NORMS:
            raise InputError(f"c_norm must be one of {NORMS}, got {self.c_norm!r}")
        if self.kernel not in SIMILARITY_KINDS:
            raise InputError(f"kernel must be one of {SIMILARITY_KINDS}, got {self.kernel!r}")
        if not (float(self.scale) > 0.0):
            raise InputError(f"scale must be > 0, got {self.scale}")
        name = self.name
        if not name:
            parts = [self.transform, self.c_norm, "adjusted" if self.adjusted else "unadjusted"]
            if self.kernel != "weighted-ibs":
                parts.insert(0, self.kernel)
            name = ":".join(parts)
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "adjusted", bool(self.adjusted))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def from_string(cls, text: str) -> "MethodConfig":
        """Parse "transform[:c_norm[:adjusted|unadjusted]]"."""
        parts = [p.strip() for p in text.split(":") if p.strip()]
        if not parts or len(parts) > 3:
            raise InputError(f"cannot parse method {text!r}")
        transform = parts[0]
        c_norm = parts[1] if len(parts) > 1 else "L2"
        adjusted = False
        if len(parts) == 3:
            if parts[2] not in ("adjusted", "unadjusted"):
                raise InputError(f"method flag must be adjusted|unadjusted, got {parts[2]!r}")
            adjusted = parts[2] == "adjusted"
        return cls(transform=transform, c_norm=c_norm, adjusted=adjusted)


@dataclass(frozen=True)
class StudyRow:
    scenario: str
    method: str
    replicates: int
    alpha: float
    rejection_rate: float
    se: float
    failures: int
    seed: int


@dataclass(frozen=True)
class StudyReport:
    """Rejection-rate table; renders byte-deterministically."""

    rows: tuple[StudyRow, ...]

    _COLUMNS = ("scenario", "method", "replicates", "alpha", "rejection_rate", "se", "failures", "seed")

    def to_tsv(self) -> str:
        lines = ["\t".join(self._COLUMNS)]
        for row in self.rows:
            record = asdict(row)
            lines.append("\t".join(_format_cell(record[c]) for c in self._COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows]}, sort_keys=True, indent=2) + "\n"


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _method_pvalue(K, ref, y, X, method: MethodConfig, cache: dict) -> float:
    """p-value of one method on one replicate, reusing cached pieces."""
    n = K.n_samples
    qkey = ("q", method.transform)
    if qkey not in cache:
        cache[qkey] = quantile_transform(y, transform=method.transform)
    Q = cache[qkey]
    if not method.adjusted:
        if ref.spec.lambdas.size == 0:
            return 1.0  # degenerate kernel carries no information
        stat = wu_statistic(K, Q)
        return _reference_tail(ref, Q.q, stat)[0]
    if X is None:
        raise InputError(f"method {method.name!r} is covariate-adjusted but the scenario has no covariates")
    rkey = ("resid", method.transform)
    if rkey not in cache:
        cache[rkey] = project_residuals(Q, X)
    qe, ctx = cache[rkey]
    kkey = ("kadj", method.kernel, method.scale, method.c_norm)
    if kkey not in cache:
        ke = projected_kernel(K, ctx)
        cache[kkey] = scaled_eigenvalues(ke)
    adj_spec = cache[kkey]
    if adj_spec.lambdas.size == 0:
        return 1.0
    stat = float(qe @ K.values @ qe) / (n * (n - 1))
    return mixture_tail_probability(adj_spec, n * stat)


def _replicate_pvalues(scenario: Scenario, pool: GenotypePool, methods, maf_threshold: float, i: int):
    """All methods' p-values on replicate i; None marks a failed method."""
    streams = np.random.SeedSequence((scenario.seed, i)).spawn(4)
    geno_seed, impute_seed, effect_seed, pheno_seed = streams
    try:
        G = sample_genotypes(pool, scenario.n, scenario.n_variants, geno_seed)
        if not G.is_complete:  # file pools may carry NA cells
            G = impute_missing(G, compute_maf(G), impute_seed)
        maf = compute_maf(G)
        G = filter_by_maf(G, maf, maf_threshold)
        beta = draw_effects(G, scenario, effect_seed)
        y, X = simulate_phenotype(G, beta, scenario, pheno_seed)
        maf = compute_maf(G)
    except WeightedUError:
        return [None] * len(methods)

    cache: dict = {}
    kernels: dict = {}
    out = []
    for method in methods:
        try:
            kkey = ("k", method.kernel, method.scale, method.c_norm)
            if kkey not in kernels:
                if method.kernel == "weighted-ibs":
                    W = weighted_ibs(G, maf)
                else:
                    W = exp_distance_similarity(G, scale=method.scale)
                K = centered_weight_matrix(W, norm=method.c_norm)
                kernels[kkey] = (K, _null_reference(K))
            K, ref = kernels[kkey]
            out.append(_method_pvalue(K, ref, y, X, method, cache))
        except (WeightedUError, np.linalg.LinAlgError):
            out.append(None)
    return out


def run_study(
    scenario: Scenario,
    pool: GenotypePool,
    methods,
    alpha_level: float = 0.05,
    maf_threshold: float = 0.03,
    n_jobs: int = 1,
) -> StudyReport:
    """Estimate each method's rejection rate over the scenario's replicates.

    Every method sees the same replicates (kernel and spectrum reused
    where configurations coincide). A replicate on which a method raises
    a package error is counted in that method's ``failures`` column and
    excluded from its denominator; unexpected exceptions propagate.
    Rejection means p < alpha_level (strict).
    """
    if isinstance(methods, MethodConfig):
        methods = [methods]
    methods = tuple(methods)
    if not methods:
        raise InputError("need at least one method configuration")
    if len({m.name for m in methods}) != len(methods):
        raise InputError("method names must be unique within a study")
    if not (0.0 < float(alpha_level) < 1.0):
        raise InputError(f"alpha_level must lie in (0, 1), got {alpha_level}")
    if any(m.adjusted for m in methods) and not scenario.with_covariates:
        raise InputError("covariate-adjusted methods need a scenario with covariates")

    reps = scenario.replicates
    if int(n_jobs) == 1:
        results = [
            _replicate_pvalues(scenario, pool, methods, maf_threshold, i) for i in range(reps)
        ]
    else:
        results = joblib.Parallel(n_jobs=int(n_jobs))(
            joblib.delayed(_replicate_pvalues)(scenario, pool, methods, maf_threshold, i)
            for i in range(reps)
        )

    rows = []
    for j, method in enumerate(methods):
        pvals = [r[j] for r in results]
        ok = [p for p in pvals if p is not None]
        failures = reps - len(ok)
        if ok:
            rate = sum(1 for p in ok if p < alpha_level) / len(ok)
            se = math.sqrt(rate * (1.0 - rate) / len(ok))
        else:
            rate = math.nan
            se = math.nan
        rows.append(
            StudyRow(
                scenario=scenario.label(),
                method=method.name,
                replicates=reps,
                alpha=float(alpha_level),
                rejection_rate=rate,
                se=se,
                failures=failures,
                seed=scenario.seed,
            )
        )
    return StudyReport(rows=tuple(rows))


def study_pvalues(
    scenario: Scenario,
    pool: GenotypePool,
    method: MethodConfig,
    maf_threshold: float = 0.03,
    n_jobs: int = 1,
) -> np.ndarray:
    """The raw per-replicate p-values of one method (failures dropped).

    Shares the replicate engine with :func:`run_study`, so element i here
    is exactly the p-value run_study saw for replicate i.
    """
    report_methods = (method,)
    reps = scenario.replicates
    if int(n_jobs) == 1:
        results = [
            _replicate_pvalues(scenario, pool, report_methods, maf_threshold, i)
            for i in range(reps)
        ]
    else:
        results = joblib.Parallel(n_jobs=int(n_jobs))(
            joblib.delayed(_replicate_pvalues)(scenario, pool, report_methods, maf_threshold, i)
            for i in range(reps)
        )
    return np.array([r[0] for r in results if r[0] is not None], dtype=float)
