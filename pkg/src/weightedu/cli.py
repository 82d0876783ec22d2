"""Command-line front end: ``weightedu assoc | simulate | nullcheck``.

Exit codes are a stable contract for pipeline integration: 0 on
success, 2 for input problems (files, options, degenerate data), 3 for
numerical failures (accuracy not reachable, eigendecomposition trouble).
Reports are byte-deterministic given identical inputs and seeds, and
every report carries the seeds it used.

``assoc`` runs the association pipeline (impute missing genotypes,
filter by frequency, build the similarity kernel, transform the
phenotype, test) on one genotype/phenotype pair. A variant-to-region
map file (header ``variant_id<TAB>region``) splits the run into one test
per region plus a pooled test over all mapped variants, reported as the
reserved region name "ALL"; without a map all variants form that single
pooled region. A region that fails (say, no variants survive the
frequency filter) becomes a report row with the error message in its
diagnostics column; the command still exits 0 unless every region
failed.

``simulate`` drives a rejection-rate study from a flat key=value
scenario file (see ``SCENARIO_KEYS`` for the schema), and ``nullcheck``
tabulates mixture tail probabilities from both the analytic and the
Monte-Carlo engines so the null machinery can be validated in the
field.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_seed
from .data import (
    _read_nonempty_lines,
    align_by_sample,
    compute_maf,
    filter_by_maf,
    impute_missing,
    load_covariates,
    load_genotypes,
    load_phenotype,
)
from .errors import InputError, NumericalError, WeightedUError
from .nulldist import (
    MixtureSpec,
    asymptotic_pvalue,
    mixture_tail_montecarlo,
    mixture_tail_probability,
    permutation_pvalue,
)
from .projection import adjusted_test, project_residuals
from .similarity import exp_distance_similarity, weighted_ibs
from .simulate import (
    GenotypePool,
    MethodConfig,
    Scenario,
    run_study,
)
from .statistic import centered_weight_matrix
from .transform import quantile_transform

#: Keys accepted in a scenario file, with their parser.
SCENARIO_KEYS = {
    "family": str,
    "effect_mode": str,
    "pct_functional": float,
    "n": int,
    "n_variants": int,
    "mu_beta": float,
    "sigma_beta": float,
    "mu": float,
    "sigma": float,
    "b": float,
    "with_covariates": "bool",
    "alpha1": float,
    "alpha2": float,
    "replicates": int,
    "seed": int,
    "alpha_level": float,
    "maf_threshold": float,
    "methods": str,
    "pool": str,
    "pool_path": str,
}

_NA = "NA"


@dataclass(frozen=True)
class AssocRequest:
    """Everything the assoc subcommand needs, decoupled from argparse."""

    genotypes: str
    phenotype: str
    covariates: str | None = None
    maf_threshold: float = 0.03
    kernel: str = "weighted-ibs"
    scale: float = 1.0
    transform: str = "quantile"
    c_norm: str = "L2"
    permutations: int = 0
    seed: int = 0
    regions: str | None = None


# ---------------------------------------------------------------------------
# assoc
# ---------------------------------------------------------------------------


def load_region_map(path, variant_ids) -> dict[str, list[int]]:
    """Parse a variant-to-region TSV into {region: [column indices]}.

    The header must be exactly ``variant_id<TAB>region``. Map lines for
    variants absent from the genotype file are ignored (a map may cover
    more than one dataset); genotype variants absent from the map take
    part in no region. "ALL" is reserved for the pooled test.
    """
    lines = _read_nonempty_lines(path)
    if not lines or lines[0].split("\t") != ["variant_id", "region"]:
        raise InputError(f"{path}: first line must be the header 'variant_id\\tregion'")
    col_of = {vid: j for j, vid in enumerate(variant_ids)}
    assigned: dict[str, str] = {}
    regions: dict[str, list[int]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 2:
            raise InputError(f"{path}:{lineno}: expected 2 columns, got {len(fields)}")
        vid, region = fields
        if region == "ALL":
            raise InputError(f"{path}:{lineno}: region name 'ALL' is reserved for the pooled test")
        if vid in assigned and assigned[vid] != region:
            raise InputError(
                f"{path}:{lineno}: variant {vid!r} mapped to both "
                f"{assigned[vid]!r} and {region!r}"
            )
        assigned[vid] = region
        if vid in col_of:
            regions.setdefault(region, []).append(col_of[vid])
    if not any(regions.values()):
        raise InputError(f"{path}: no mapped variant is present in the genotype file")
    return {name: sorted(cols) for name, cols in regions.items()}


def _test_columns(G, cols, y, X, request: AssocRequest, impute_stream, perm_seed: int) -> dict:
    sub = G.subset_variants(np.asarray(cols, dtype=int))
    sub = impute_missing(sub, compute_maf(sub), impute_stream)
    maf = compute_maf(sub)  # frequencies on the completed data
    sub = filter_by_maf(sub, maf, request.maf_threshold)
    maf = compute_maf(sub)
    if request.kernel == "weighted-ibs":
        W = weighted_ibs(sub, maf)
    else:
        W = exp_distance_similarity(sub, scale=request.scale)
    K = centered_weight_matrix(W, norm=request.c_norm)
    Q = quantile_transform(y, transform=request.transform)
    if X is None:
        result = asymptotic_pvalue(K, Q)
        perm_q = Q
    else:
        result, _ctx = adjusted_test(K, Q, X)
        perm_q, _ = project_residuals(Q, X)
    if request.permutations > 0:
        p_perm = permutation_pvalue(K, perm_q, request.permutations, perm_seed)
        result = replace(result, p_permutation=p_perm, n_permutations=request.permutations)
    return {
        "n": sub.n_samples,
        "p_retained": sub.n_variants,
        "statistic": result.statistic,
        "p_asymptotic": result.p_asymptotic,
        "p_permutation": result.p_permutation,
        "c": K.c,
        "norm": K.norm,
        "seed": request.seed,
        "diagnostics": result.diagnostics.to_dict(),
    }


def run_association(request: AssocRequest) -> tuple[list[dict], int]:
    """Run the assoc pipeline; returns (report rows, exit code).

    One row per region, sorted by region name with the pooled "ALL" row
    last. Failed regions carry an "error" field instead of results; the
    exit code is 0 while at least one region succeeded, otherwise 2 or 3
    depending on the failures seen.
    """
    G = load_genotypes(request.genotypes)
    ph_ids, ph_values = load_phenotype(request.phenotype)
    y = align_by_sample(G.sample_ids, ph_ids, ph_values, "phenotype")
    X = None
    if request.covariates:
        cov_ids, cov_values, _names = load_covariates(request.covariates)
        X = align_by_sample(G.sample_ids, cov_ids, cov_values, "covariate")

    if request.regions:
        region_cols = load_region_map(request.regions, G.variant_ids)
        pooled = sorted({c for cols in region_cols.values() for c in cols})
        names = sorted(region_cols) + ["ALL"]
        region_cols["ALL"] = pooled
    else:
        names = ["ALL"]
        region_cols = {"ALL": list(range(G.n_variants))}

    root = np.random.SeedSequence(check_seed(request.seed))
    streams = root.spawn(len(names))
    rows: list[dict] = []
    had_numerical = False
    failures = 0
    for name, stream in zip(names, streams):
        impute_stream, perm_stream = stream.spawn(2)
        perm_seed = int(perm_stream.generate_state(1)[0])
        try:
            row = _test_columns(G, region_cols[name], y, X, request, impute_stream, perm_seed)
        except WeightedUError as exc:
            failures += 1
            had_numerical = had_numerical or isinstance(exc, NumericalError)
            rows.append({"region": name, "error": str(exc), "seed": request.seed})
        except np.linalg.LinAlgError as exc:
            failures += 1
            had_numerical = True
            rows.append({"region": name, "error": f"linear algebra failure: {exc}", "seed": request.seed})
        else:
            rows.append({"region": name, **row})
    if failures == len(names):
        return rows, (3 if had_numerical else 2)
    return rows, 0


_ASSOC_COLUMNS = (
    "region",
    "n",
    "p_retained",
    "statistic",
    "p_asymptotic",
    "p_permutation",
    "c",
    "norm",
    "seed",
    "diagnostics",
)


def _format_value(value) -> str:
    if value is None:
        return _NA
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_assoc_tsv(rows: list[dict]) -> str:
    lines = ["\t".join(_ASSOC_COLUMNS)]
    for row in rows:
        if "error" in row:
            cells = [row["region"]] + [_NA] * 7 + [str(row["seed"])]
            message = str(row["error"]).replace("\t", " ").replace("\n", " ")
            cells.append(f"error={message}")
        else:
            diag = row["diagnostics"]
            diag_text = ";".join(f"{k}={_format_value(diag[k])}" for k in sorted(diag))
            cells = [_format_value(row[c]) for c in _ASSOC_COLUMNS[:-1]] + [diag_text]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def render_assoc_json(rows: list[dict]) -> str:
    return json.dumps({"rows": rows}, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def parse_scenario_file(path) -> dict:
    """Read a flat key=value scenario file into a raw dict (strings parsed).

    Blank lines and lines starting with '#' are skipped. Unknown keys and
    unparsable values are reported by name.
    """
    raw: dict = {}
    for lineno, line in enumerate(_read_nonempty_lines(path), start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InputError(f"{path}: line {lineno!s} is not a key=value pair: {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCENARIO_KEYS:
            raise InputError(f"{path}: unknown scenario key {key!r}")
        if key in raw:
            raise InputError(f"{path}: duplicate scenario key {key!r}")
        parser = SCENARIO_KEYS[key]
        if parser == "bool":
            lowered = value.lower()
            if lowered in ("1", "true", "yes"):
                raw[key] = True
            elif lowered in ("0", "false", "no"):
                raw[key] = False
            else:
                raise InputError(f"{path}: key {key!r} needs a boolean, got {value!r}")
        else:
            try:
                raw[key] = parser(value)
            except ValueError:
                raise InputError(
                    f"{path}: key {key!r} needs a {parser.__name__}, got {value!r}"
                ) from None
    return raw


def build_study(raw: dict) -> tuple[Scenario, GenotypePool, list[MethodConfig], float, float]:
    """Turn a parsed scenario dict into run_study arguments."""
    raw = dict(raw)
    alpha_level = raw.pop("alpha_level", 0.05)
    maf_threshold = raw.pop("maf_threshold", 0.03)
    methods_text = raw.pop("methods", "")
    pool_source = raw.pop("pool", "synthetic")
    pool_path = raw.pop("pool_path", None)
    alpha = (raw.pop("alpha1", 0.5), raw.pop("alpha2", 0.5))
    if "family" in raw:
        raw["phenotype_family"] = raw.pop("family")
    scenario = Scenario(alpha=alpha, **raw)
    pool = GenotypePool(source=pool_source, path=pool_path)
    if methods_text:
        methods = [MethodConfig.from_string(part) for part in methods_text.split(",") if part.strip()]
        if not methods:
            raise InputError("scenario key 'methods' names no methods")
    else:
        methods = [MethodConfig(adjusted=scenario.with_covariates)]
    return scenario, pool, methods, float(alpha_level), float(maf_threshold)


# ---------------------------------------------------------------------------
# nullcheck
# ---------------------------------------------------------------------------


def load_weights(path) -> np.ndarray:
    """One mixture weight per line; blank lines and '#' comments skipped."""
    values = []
    for lineno, line in enumerate(_read_nonempty_lines(path), start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            continue
        try:
            values.append(float(stripped))
        except ValueError:
            raise InputError(f"{path}:{lineno}: weight {stripped!r} is not a number") from None
    if not values:
        raise InputError(f"{path}: weights file is empty")
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: weights must be finite")
    return arr


def run_nullcheck(weights: np.ndarray, grid, mc_draws: int, seed: int) -> list[dict]:
    spec = MixtureSpec(lambdas=weights)
    streams = np.random.SeedSequence(check_seed(seed)).spawn(len(grid))
    rows = []
    for t, stream in zip(grid, streams):
        p_davies = mixture_tail_probability(spec, float(t))
        p_mc, se = mixture_tail_montecarlo(
            spec, float(t), draws=mc_draws, seed=int(stream.generate_state(1)[0])
        )
        rows.append(
            {
                "t": float(t),
                "p_davies": p_davies,
                "p_montecarlo": p_mc,
                "mc_se": se,
                "abs_diff": abs(p_davies - p_mc),
                "seed": seed,
            }
        )
    return rows


_NULLCHECK_COLUMNS = ("t", "p_davies", "p_montecarlo", "mc_se", "abs_diff", "seed")


def render_nullcheck_tsv(rows: list[dict]) -> str:
    lines = ["\t".join(_NULLCHECK_COLUMNS)]
    for row in rows:
        lines.append("\t".join(_format_value(row[c]) for c in _NULLCHECK_COLUMNS))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weightedu",
        description="Rank-based weighted-similarity association testing for rare variants.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    assoc = sub.add_parser("assoc", help="test genotype/phenotype association")
    assoc.add_argument("--genotypes", required=True, help="genotype TSV (samples x variants)")
    assoc.add_argument("--phenotype", required=True, help="phenotype TSV (sample_id, value)")
    assoc.add_argument("--covariates", default=None, help="covariate TSV; enables adjustment")
    assoc.add_argument("--maf-threshold", type=float, default=0.03, metavar="F",
                       help="keep variants with 0 < frequency < F (default 0.03)")
    assoc.add_argument("--kernel", choices=("weighted-ibs", "exp-distance"), default="weighted-ibs")
    assoc.add_argument("--scale", type=float, default=1.0, help="exp-distance length scale")
    assoc.add_argument("--transform", choices=("quantile", "rank"), default="quantile")
    assoc.add_argument("--c-norm", choices=("L1", "L2"), default="L2", dest="c_norm")
    assoc.add_argument("--permutations", type=int, default=0,
                       help="also compute a permutation p-value (0 = asymptotic only)")
    assoc.add_argument("--seed", type=int, default=0)
    assoc.add_argument("--regions", default=None, help="variant_id→region map TSV")
    assoc.add_argument("--output", default=None, help="write the report here (default stdout)")
    assoc.add_argument("--json", action="store_true", dest="json_output")

    sim = sub.add_parser("simulate", help="run a rejection-rate study")
    sim.add_argument("--scenario", required=True, help="key=value scenario file")
    sim.add_argument("--replicates", type=int, default=None, help="override the file's replicate count")
    sim.add_argument("--seed", type=int, default=None, help="override the file's master seed")
    sim.add_argument("--n-jobs", type=int, default=1, dest="n_jobs")
    sim.add_argument("--output", default=None)
    sim.add_argument("--json", action="store_true", dest="json_output")

    nullc = sub.add_parser("nullcheck", help="validate mixture tail probabilities")
    nullc.add_argument("--weights", required=True, help="file with one mixture weight per line")
    nullc.add_argument("--grid", default="0.1,0.5,1.0,2.0,5.0",
                       help="comma-separated evaluation points")
    nullc.add_argument("--mc-draws", type=int, default=1_000_000, dest="mc_draws")
    nullc.add_argument("--seed", type=int, default=0)
    nullc.add_argument("--output", default=None)
    nullc.add_argument("--json", action="store_true", dest="json_output")
    return parser


def _write_output(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)


def _cmd_assoc(args) -> int:
    request = AssocRequest(
        genotypes=args.genotypes,
        phenotype=args.phenotype,
        covariates=args.covariates,
        maf_threshold=args.maf_threshold,
        kernel=args.kernel,
        scale=args.scale,
        transform=args.transform,
        c_norm=args.c_norm,
        permutations=args.permutations,
        seed=args.seed,
        regions=args.regions,
    )
    rows, code = run_association(request)
    text = render_assoc_json(rows) if args.json_output else render_assoc_tsv(rows)
    _write_output(text, args.output)
    return code


def _cmd_simulate(args) -> int:
    raw = parse_scenario_file(args.scenario)
    if args.replicates is not None:
        raw["replicates"] = args.replicates
    if args.seed is not None:
        raw["seed"] = args.seed
    scenario, pool, methods, alpha_level, maf_threshold = build_study(raw)
    report = run_study(
        scenario,
        pool,
        methods,
        alpha_level=alpha_level,
        maf_threshold=maf_threshold,
        n_jobs=args.n_jobs,
    )
    text = report.to_json() if args.json_output else report.to_tsv()
    _write_output(text, args.output)
    return 0


def _cmd_nullcheck(args) -> int:
    weights = load_weights(args.weights)
    try:
        grid = [float(tok) for tok in args.grid.split(",") if tok.strip()]
    except ValueError:
        raise InputError(f"--grid must be comma-separated numbers, got {args.grid!r}") from None
    if not grid:
        raise InputError("--grid names no evaluation points")
    rows = run_nullcheck(weights, grid, args.mc_draws, args.seed)
    if args.json_output:
        text = json.dumps({"rows": rows}, sort_keys=True, indent=2) + "\n"
    else:
        text = render_nullcheck_tsv(rows)
    _write_output(text, args.output)
    return 0


_COMMANDS = {"assoc": _cmd_assoc, "simulate": _cmd_simulate, "nullcheck": _cmd_nullcheck}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
