"""Shared fixtures: synthetic data helpers, the heavy simulation runs that
several test modules read, and the acceptance-criteria summary hook.

The expensive session fixtures (eight 1000-replicate null cells, the n=500
Cauchy contrast) are computed once and shared between the invariant tests
and the acceptance module, so a full ``pytest`` run pays for each study
exactly once.
"""

import numpy as np
import pytest

from weightedu.data import GenotypeMatrix
from weightedu.similarity import weighted_ibs
from weightedu.simulate import GenotypePool, MethodConfig, Scenario, run_study, study_pvalues
from weightedu.statistic import centered_weight_matrix
from weightedu.transform import quantile_transform

# ---------------------------------------------------------------------------
# Acceptance-criteria registry: test_acceptance records one entry per
# criterion; the terminal summary prints one PASS/FAIL line for each.
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Recorder: call ``criterion("C3", ok, detail)`` before asserting."""

    def _record(cid: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_RESULTS[cid] = (bool(ok), detail)
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE_RESULTS[cid]
        word = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{cid:<4}{word}  {detail}", green=ok, red=not ok)


# ---------------------------------------------------------------------------
# Small synthetic building blocks.
# ---------------------------------------------------------------------------


def _genotypes(seed: int, n: int, n_variants: int, max_freq: float = 0.3) -> GenotypeMatrix:
    """A complete random genotype block with no monomorphic columns."""
    rng = np.random.default_rng(seed)
    cols = []
    while len(cols) < n_variants:
        freq = rng.uniform(0.01, max_freq)
        g = rng.binomial(2, freq, size=n)
        if 0 < g.sum() < 2 * n:
            cols.append(g)
    values = np.column_stack(cols).astype(float)
    return GenotypeMatrix(
        values=values,
        missing=np.zeros_like(values, dtype=bool),
        variant_ids=tuple(f"v{j}" for j in range(n_variants)),
        sample_ids=tuple(f"s{i}" for i in range(n)),
    )


@pytest.fixture(scope="session")
def make_genotypes():
    return _genotypes


@pytest.fixture(scope="session")
def make_pipeline_case():
    """Factory for (W, K, Q) triples produced by the real pipeline."""

    def _make(seed: int, n: int = 40, n_variants: int = 30, norm: str = "L2"):
        G = _genotypes(seed, n, n_variants)
        freq = G.values.mean(axis=0) / 2.0
        W = weighted_ibs(G, np.minimum(freq, 1.0 - freq))
        K = centered_weight_matrix(W, norm=norm)
        rng = np.random.default_rng(seed + 10_000)
        Q = quantile_transform(rng.standard_normal(n))
        return W, K, Q

    return _make


# ---------------------------------------------------------------------------
# Heavy shared studies (session scope).
# ---------------------------------------------------------------------------

NULL_CELL_FAMILIES = ("gaussian", "binary-logistic", "student-t-2df", "cauchy")


@pytest.fixture(scope="session")
def synthetic_pool():
    return GenotypePool()


@pytest.fixture(scope="session")
def null_cells_n200(synthetic_pool):
    """Asymptotic p-values for the eight n=200 null cells, 1000 replicates.

    Keys are (phenotype_family, adjusted). Unadjusted cells simulate without
    covariates; adjusted cells simulate with covariates in the generating
    model and project them out in the analysis.
    """
    cells = {}
    for family in NULL_CELL_FAMILIES:
        for adjusted in (False, True):
            scenario = Scenario(
                phenotype_family=family,
                effect_mode="null",
                n=200,
                n_variants=460,
                with_covariates=adjusted,
                replicates=1000,
                seed=0,
            )
            method = MethodConfig(transform="quantile", c_norm="L2", adjusted=adjusted)
            cells[(family, adjusted)] = study_pvalues(scenario, synthetic_pool, method)
    return cells


@pytest.fixture(scope="session")
def cauchy_contrast_n500(synthetic_pool):
    """Null rejection at n=500 under Cauchy noise: quantile path vs the
    no-transform baseline, 1000 replicates on shared kernels."""
    scenario = Scenario(
        phenotype_family="cauchy",
        effect_mode="null",
        n=500,
        n_variants=460,
        replicates=1000,
        seed=0,
    )
    methods = [
        MethodConfig(transform="quantile", c_norm="L2"),
        MethodConfig(transform="none", c_norm="L2"),
    ]
    report = run_study(scenario, synthetic_pool, methods)
    return {row.method: row for row in report.rows}
