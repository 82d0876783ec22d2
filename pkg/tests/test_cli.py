"""End-to-end coverage of the ``weightedu`` command line.

Everything runs in-process through ``main(argv)`` so exit codes and
stderr are observable without spawning subprocesses.
"""

import json

import numpy as np
import pytest

from weightedu.cli import (
    load_region_map,
    load_weights,
    main,
    parse_scenario_file,
)
from weightedu.data import load_phenotype, write_genotypes, write_phenotype
from weightedu.errors import InputError
from weightedu.toydata import toy_paths

# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _read_tsv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split("\t")
    return header, [dict(zip(header, line.split("\t"))) for line in lines[1:]]


def _assoc_argv(dataset, out, *extra):
    paths = toy_paths(dataset)
    argv = ["assoc", "--genotypes", str(paths["genotypes"]),
            "--phenotype", str(paths["phenotype"])]
    if "covariates" in paths:
        argv += ["--covariates", str(paths["covariates"])]
    return argv + ["--output", str(out)] + list(extra)


ASSOC_COLUMNS = ["region", "n", "p_retained", "statistic", "p_asymptotic",
                 "p_permutation", "c", "norm", "seed", "diagnostics"]


# ---------------------------------------------------------------------------
# file parsers (unit level)
# ---------------------------------------------------------------------------


class TestRegionMap:
    def test_basic(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("variant_id\tregion\nb\tgene2\na\tgene1\nzz\tgene3\n")
        regions = load_region_map(path, ("a", "b", "c"))
        # unknown variant 'zz' tolerated; unmapped 'c' in no region
        assert regions == {"gene2": [1], "gene1": [0]}

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("variant\tregion\na\tg\n")
        with pytest.raises(InputError, match="header"):
            load_region_map(path, ("a",))

    def test_reserved_name(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("variant_id\tregion\na\tALL\n")
        with pytest.raises(InputError, match="reserved"):
            load_region_map(path, ("a",))

    def test_conflicting_assignment(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("variant_id\tregion\na\tg1\na\tg2\n")
        with pytest.raises(InputError, match="mapped to both"):
            load_region_map(path, ("a",))

    def test_no_overlap(self, tmp_path):
        path = tmp_path / "map.tsv"
        path.write_text("variant_id\tregion\nzz\tg1\n")
        with pytest.raises(InputError, match="no mapped variant"):
            load_region_map(path, ("a", "b"))


class TestScenarioFile:
    def test_parses_types_and_comments(self, tmp_path):
        path = tmp_path / "sc.txt"
        path.write_text(
            "# a comment\nfamily=cauchy\nn=80\nsigma_beta=0.4\n"
            "with_covariates=true\nmethods=quantile,none:L2\n"
        )
        raw = parse_scenario_file(path)
        assert raw == {"family": "cauchy", "n": 80, "sigma_beta": 0.4,
                       "with_covariates": True, "methods": "quantile,none:L2"}

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "sc.txt"
        path.write_text("familly=gaussian\n")
        with pytest.raises(InputError, match="familly"):
            parse_scenario_file(path)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "sc.txt"
        path.write_text("n=10\nn=20\n")
        with pytest.raises(InputError, match="duplicate"):
            parse_scenario_file(path)

    def test_not_key_value(self, tmp_path):
        path = tmp_path / "sc.txt"
        path.write_text("just a line\n")
        with pytest.raises(InputError, match="key=value"):
            parse_scenario_file(path)

    def test_bad_bool_and_int(self, tmp_path):
        path = tmp_path / "sc.txt"
        path.write_text("with_covariates=perhaps\n")
        with pytest.raises(InputError, match="boolean"):
            parse_scenario_file(path)
        path.write_text("n=ten\n")
        with pytest.raises(InputError, match="'n' needs a int"):
            parse_scenario_file(path)


def test_load_weights(tmp_path):
    path = tmp_path / "w.txt"
    path.write_text("# spectrum\n1.5\n-0.5\n\n0.25\n")
    np.testing.assert_array_equal(load_weights(path), [1.5, -0.5, 0.25])
    path.write_text("abc\n")
    with pytest.raises(InputError, match="not a number"):
        load_weights(path)
    path.write_text("# only a comment\n")
    with pytest.raises(InputError, match="empty"):
        load_weights(path)


# ---------------------------------------------------------------------------
# assoc
# ---------------------------------------------------------------------------


class TestAssoc:
    def test_planted_signal_detected(self, tmp_path):
        out = tmp_path / "report.tsv"
        code = main(_assoc_argv("planted_gaussian", out))
        assert code == 0
        header, rows = _read_tsv(out)
        assert header == ASSOC_COLUMNS
        assert [r["region"] for r in rows] == ["ALL"]
        row = rows[0]
        assert float(row["p_asymptotic"]) < 0.05
        assert row["p_permutation"] == "NA"
        assert (row["n"], row["p_retained"]) == ("200", "60")

    def test_adjusted_run_with_covariates(self, tmp_path):
        out = tmp_path / "report.tsv"
        assert main(_assoc_argv("binary_covariates", out)) == 0
        _, rows = _read_tsv(out)
        assert "covariate_rank=3" in rows[0]["diagnostics"]
        assert float(rows[0]["p_asymptotic"]) < 0.05

    def test_permutation_channel_agrees(self, tmp_path):
        out = tmp_path / "report.tsv"
        code = main(_assoc_argv("null_gaussian", out,
                                "--permutations", "1000", "--seed", "5"))
        assert code == 0
        _, rows = _read_tsv(out)
        p_asym = float(rows[0]["p_asymptotic"])
        p_perm = float(rows[0]["p_permutation"])
        assert abs(p_asym - p_perm) < 0.05

    def test_regions_rows_sorted_pooled_last(self, tmp_path):
        paths = toy_paths("null_gaussian")
        ids = [f"v{j + 1:05d}" for j in range(60)]
        region_map = tmp_path / "map.tsv"
        region_map.write_text(
            "variant_id\tregion\n"
            + "".join(f"{vid}\tgeneB\n" for vid in ids[30:])
            + "".join(f"{vid}\tgeneA\n" for vid in ids[:30])
        )
        out = tmp_path / "report.tsv"
        code = main(["assoc", "--genotypes", str(paths["genotypes"]),
                     "--phenotype", str(paths["phenotype"]),
                     "--regions", str(region_map), "--output", str(out)])
        assert code == 0
        _, rows = _read_tsv(out)
        assert [r["region"] for r in rows] == ["geneA", "geneB", "ALL"]
        assert [r["p_retained"] for r in rows] == ["30", "30", "60"]

    def test_partial_region_failure_still_exits_zero(self, tmp_path):
        # two common variants (filtered away) + two rare carriers
        rng = np.random.default_rng(7)
        n = 40
        values = np.zeros((n, 4), dtype=np.int16)
        values[:, 0] = rng.binomial(2, 0.4, size=n)
        values[:, 1] = rng.binomial(2, 0.45, size=n)
        values[0, 2] = 1
        values[5, 3] = 1
        from weightedu.data import GenotypeMatrix

        G = GenotypeMatrix(values=values, missing=np.zeros_like(values, dtype=bool),
                           variant_ids=("c1", "c2", "r1", "r2"),
                           sample_ids=tuple(f"s{i}" for i in range(n)))
        geno = tmp_path / "g.tsv"
        pheno = tmp_path / "y.tsv"
        write_genotypes(G, geno)
        write_phenotype(G.sample_ids, rng.standard_normal(n), pheno)
        region_map = tmp_path / "map.tsv"
        region_map.write_text(
            "variant_id\tregion\nc1\tcommon\nc2\tcommon\nr1\track\nr2\track\n"
        )
        out = tmp_path / "report.tsv"
        code = main(["assoc", "--genotypes", str(geno), "--phenotype", str(pheno),
                     "--regions", str(region_map), "--output", str(out)])
        assert code == 0
        _, rows = _read_tsv(out)
        by_region = {r["region"]: r for r in rows}
        assert by_region["common"]["n"] == "NA"
        assert by_region["common"]["diagnostics"].startswith("error=")
        assert by_region["rack"]["p_retained"] == "2"
        assert by_region["ALL"]["p_retained"] == "2"

    def test_all_regions_failing_exits_two(self, tmp_path, capsys):
        out = tmp_path / "report.tsv"
        code = main(_assoc_argv("null_gaussian", out, "--maf-threshold", "1e-6"))
        assert code == 2
        _, rows = _read_tsv(out)
        assert "error=" in rows[0]["diagnostics"]

    def test_missing_file_exits_two(self, tmp_path, capsys):
        code = main(["assoc", "--genotypes", str(tmp_path / "nope.tsv"),
                     "--phenotype", str(tmp_path / "nope2.tsv")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_byte_deterministic(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        main(_assoc_argv("planted_cauchy", a, "--permutations", "500"))
        main(_assoc_argv("planted_cauchy", b, "--permutations", "500"))
        assert a.read_bytes() == b.read_bytes()

    def test_json_output(self, tmp_path):
        out = tmp_path / "report.json"
        code = main(_assoc_argv("null_gaussian", out, "--json"))
        assert code == 0
        payload = json.loads(out.read_text())
        (row,) = payload["rows"]
        assert row["region"] == "ALL"
        assert isinstance(row["p_asymptotic"], float)
        assert isinstance(row["diagnostics"], dict)

    def test_alternative_kernel_and_transform(self, tmp_path):
        out = tmp_path / "report.tsv"
        code = main(_assoc_argv("null_gaussian", out, "--kernel", "exp-distance",
                                "--scale", "4.0", "--transform", "rank",
                                "--c-norm", "L1"))
        assert code == 0
        _, rows = _read_tsv(out)
        assert rows[0]["norm"] == "L1"
        assert 0.0 <= float(rows[0]["p_asymptotic"]) <= 1.0


def test_shuffled_phenotypes_hold_level(tmp_path):
    """100 seeded phenotype shuffles against fixed genotypes: the number
    of p < 0.05 calls stays inside a generous binomial envelope."""
    paths = toy_paths("null_gaussian")
    ids, values = load_phenotype(paths["phenotype"])
    rng = np.random.default_rng(101)
    pheno = tmp_path / "shuffled.tsv"
    out = tmp_path / "report.tsv"
    rejections = 0
    for _ in range(100):
        write_phenotype(ids, rng.permutation(values), pheno)
        code = main(["assoc", "--genotypes", str(paths["genotypes"]),
                     "--phenotype", str(pheno), "--output", str(out)])
        assert code == 0
        _, rows = _read_tsv(out)
        rejections += float(rows[0]["p_asymptotic"]) < 0.05
    assert 0 <= rejections <= 12, f"{rejections} rejections out of 100 shuffles"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


class TestSimulateCommand:
    def _scenario(self, tmp_path, text):
        path = tmp_path / "scenario.txt"
        path.write_text(text)
        return str(path)

    SMALL = "family=gaussian\nn=60\nn_variants=80\nreplicates=5\nseed=3\n"

    def test_small_study_runs(self, tmp_path):
        out = tmp_path / "study.tsv"
        code = main(["simulate", "--scenario", self._scenario(tmp_path, self.SMALL),
                     "--output", str(out)])
        assert code == 0
        header, rows = _read_tsv(out)
        assert rows[0]["method"] == "quantile:L2:unadjusted"
        assert rows[0]["replicates"] == "5"

    def test_single_replicate_rate_is_binary(self, tmp_path):
        out = tmp_path / "study.tsv"
        code = main(["simulate", "--scenario", self._scenario(tmp_path, self.SMALL),
                     "--replicates", "1", "--output", str(out)])
        assert code == 0
        _, rows = _read_tsv(out)
        assert float(rows[0]["rejection_rate"]) in (0.0, 1.0)

    def test_malformed_key_exits_two(self, tmp_path, capsys):
        code = main(["simulate", "--scenario",
                     self._scenario(tmp_path, "famly=gaussian\n")])
        assert code == 2
        assert "famly" in capsys.readouterr().err

    def test_byte_deterministic(self, tmp_path):
        scenario = self._scenario(
            tmp_path, self.SMALL + "methods=quantile,rank:L1\nwith_covariates=yes\n"
        )
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        assert main(["simulate", "--scenario", scenario, "--output", str(a)]) == 0
        assert main(["simulate", "--scenario", scenario, "--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_override_changes_report(self, tmp_path):
        scenario = self._scenario(tmp_path, self.SMALL)
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        main(["simulate", "--scenario", scenario, "--output", str(a)])
        main(["simulate", "--scenario", scenario, "--seed", "99", "--output", str(b)])
        assert a.read_text() != b.read_text()

    def test_json_output(self, tmp_path):
        out = tmp_path / "study.json"
        code = main(["simulate", "--scenario", self._scenario(tmp_path, self.SMALL),
                     "--json", "--output", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["rows"][0]["scenario"].startswith("gaussian|null")


# ---------------------------------------------------------------------------
# nullcheck
# ---------------------------------------------------------------------------


class TestNullcheck:
    def _run(self, tmp_path, weights_text, grid):
        weights = tmp_path / "weights.txt"
        weights.write_text(weights_text)
        out = tmp_path / "null.tsv"
        code = main(["nullcheck", "--weights", str(weights), "--grid", grid,
                     "--mc-draws", "1000000", "--output", str(out)])
        assert code == 0
        _, rows = _read_tsv(out)
        return {float(r["t"]): r for r in rows}

    def test_single_chisquare(self, tmp_path):
        rows = self._run(tmp_path, "1.0\n", "3.841")
        row = rows[3.841]
        assert abs(float(row["p_davies"]) - 0.05) < 1e-3
        assert abs(float(row["p_montecarlo"]) - 0.05) < 1e-3
        assert float(row["abs_diff"]) < 1e-3

    def test_exponential_pair(self, tmp_path):
        rows = self._run(tmp_path, "0.5\n0.5\n", "1.0,2.0")
        assert abs(float(rows[1.0]["p_davies"]) - np.exp(-1.0)) < 1e-4
        assert abs(float(rows[2.0]["p_davies"]) - np.exp(-2.0)) < 1e-4
        assert float(rows[1.0]["abs_diff"]) < 2e-3

    def test_balanced_signs_median(self, tmp_path):
        rows = self._run(tmp_path, "1.0\n-1.0\n", "0.0")
        assert abs(float(rows[0.0]["p_davies"]) - 0.5) < 1e-6
        assert float(rows[0.0]["abs_diff"]) < 2e-3

    def test_default_grid_and_determinism(self, tmp_path):
        weights = tmp_path / "weights.txt"
        weights.write_text("2.0\n1.0\n0.5\n")
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        base = ["nullcheck", "--weights", str(weights), "--mc-draws", "100000"]
        assert main(base + ["--output", str(a)]) == 0
        assert main(base + ["--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        _, rows = _read_tsv(a)
        assert [float(r["t"]) for r in rows] == [0.1, 0.5, 1.0, 2.0, 5.0]

    def test_bad_grid_exits_two(self, tmp_path, capsys):
        weights = tmp_path / "weights.txt"
        weights.write_text("1.0\n")
        code = main(["nullcheck", "--weights", str(weights), "--grid", "1.0,zap"])
        assert code == 2
        assert "--grid" in capsys.readouterr().err

    def test_json_output(self, tmp_path):
        weights = tmp_path / "weights.txt"
        weights.write_text("1.0\n")
        out = tmp_path / "null.json"
        code = main(["nullcheck", "--weights", str(weights), "--grid", "3.841",
                     "--mc-draws", "100000", "--json", "--output", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["rows"][0]["t"] == 3.841
