import io
import json

import numpy as np
import pytest

from cohortjack.cli import main
from cohortjack.montecarlo import DESIGN_GRID
from cohortjack.report import validate_report

from conftest import EX1, EX2, make_panel, panel_csv


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(map(str, argv)), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def ex1_csv(tmp_path):
    p = make_panel(EX1, T=3, units=4, rng=np.random.default_rng(1))
    path = tmp_path / "ex1.csv"
    path.write_text(panel_csv(p, EX1))
    return path


@pytest.fixture
def ex2_csv(tmp_path):
    p = make_panel(EX2, T=3, units=4, rng=np.random.default_rng(2))
    path = tmp_path / "ex2.csv"
    path.write_text(panel_csv(p, EX2))
    return path


@pytest.fixture
def dropout_csv(tmp_path):
    gvar = {"A": 2, "B": 3, "C": 0, "D": 0}
    p = make_panel(gvar, T=3, units=3, rng=np.random.default_rng(3))
    path = tmp_path / "dropout.csv"
    path.write_text(panel_csv(p, gvar))
    return path


class TestEstimate:
    def test_example_1_table(self, ex1_csv):
        code, out, _ = run("estimate", "--input", ex1_csv, "--gvar-col", "gvar")
        assert code == 0
        lines = out.splitlines()
        cell_rows = [ln for ln in lines[2:] if ln.strip() and ln.split()[0] in ("2", "3")]
        assert len(cell_rows) == 3
        assert "Aggregate ATT (simple, never-treated)" in out
        assert "CSDID asymptotic" in out

    def test_single_region_groups_report_degenerate_se(self, ex1_csv):
        code, out, err = run("estimate", "--input", ex1_csv, "--gvar-col", "gvar")
        assert code == 0
        assert "standard error is zero" in err and "degenerate" in out

    def test_json_validates(self, ex1_csv):
        code, out, _ = run("estimate", "--input", ex1_csv, "--gvar-col", "gvar",
                           "--format", "json")
        assert code == 0
        doc = json.loads(out)
        validate_report(doc)
        assert doc["schema_version"] == "1.0"
        assert [(c["g"], c["t"]) for c in doc["cells"]] == [(2, 2), (2, 3), (3, 3)]
        assert doc["att"]["value"] == pytest.approx(np.mean([c["att"] for c in doc["cells"]]))

    @pytest.mark.parametrize("method", ["asymptotic", "bootstrap", "jackknife"])
    def test_methods(self, ex2_csv, method):
        code, out, _ = run("estimate", "--input", ex2_csv, "--gvar-col", "gvar",
                           "--method", method, "--format", "json", "--B", 199)
        assert code == 0
        names = {"asymptotic": "asymptotic", "bootstrap": "multiplier_bootstrap",
                 "jackknife": "jackknife_cv3"}
        assert json.loads(out)["inference"][0]["method"] == names[method]

    def test_csv_output(self, ex2_csv):
        code, out, _ = run("estimate", "--input", ex2_csv, "--gvar-col", "gvar",
                           "--format", "csv", "--control", "notyet", "--agg", "group")
        assert code == 0
        assert out.splitlines()[0] == "g,t,att,n_treated,n_comparison,weight,comparison"

    def test_gvar_file(self, ex2_csv, tmp_path):
        gfile = tmp_path / "timing.csv"
        gfile.write_text("state,first\n" + "".join(f"{r},{g}\n" for r, g in EX2.items()))
        a = run("estimate", "--input", ex2_csv, "--gvar-file", gfile, "--format", "json")
        b = run("estimate", "--input", ex2_csv, "--gvar-col", "gvar", "--format", "json")
        assert a[0] == 0 and a[1] == b[1]

    def test_custom_columns_and_labels(self, tmp_path):
        rows = ["id,state,year,wage,adopt"]
        rng = np.random.default_rng(0)
        for r, g in {"A": 2001, "B": 2002, "C": 0, "D": 0}.items():
            for y in (2000, 2001, 2002):
                rows.append(f"{r}1,{r},{y},{rng.normal():.6f},{g}")
        path = tmp_path / "wages.csv"
        path.write_text("\n".join(rows) + "\n")
        code, out, err = run("estimate", "--input", path, "--unit-col", "id", "--region-col",
                             "state", "--time-col", "year", "--outcome-col", "wage",
                             "--gvar-col", "adopt", "--format", "json")
        assert code == 0, err
        assert [(c["g"], c["t"]) for c in json.loads(out)["cells"]] == \
            [(2001, 2001), (2001, 2002), (2002, 2002)]

    def test_demean_leaves_estimate_unchanged(self, ex2_csv):
        a = json.loads(run("estimate", "--input", ex2_csv, "--gvar-col", "gvar",
                           "--format", "json")[1])
        b = json.loads(run("estimate", "--input", ex2_csv, "--gvar-col", "gvar", "--demean",
                           "--format", "json")[1])
        assert b["att"]["value"] == pytest.approx(a["att"]["value"], abs=1e-12)


class TestExitCodes:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        code, _, err = run("estimate", "--input", path, "--gvar-col", "gvar")
        assert code == 1 and "empty" in err

    def test_missing_file(self, tmp_path):
        assert run("estimate", "--input", tmp_path / "nope.csv", "--gvar-col", "g")[0] == 1

    def test_missing_timing(self, ex1_csv):
        code, _, err = run("estimate", "--input", ex1_csv)
        assert code == 1 and "--gvar-col" in err

    def test_bad_flag(self, ex1_csv):
        assert run("estimate", "--input", ex1_csv, "--agg", "cohort")[0] == 1
        assert run("frobnicate")[0] == 1
        assert run("estimate", "--input", ex1_csv, "--gvar-col", "gvar", "--threads", 0)[0] == 1

    def test_no_treated_regions(self, tmp_path):
        gvar = {"A": 0, "B": 0}
        path = tmp_path / "none.csv"
        path.write_text(panel_csv(make_panel(gvar, rng=np.random.default_rng(0)), gvar))
        code, _, err = run("estimate", "--input", path, "--gvar-col", "gvar")
        assert code == 2 and "infeasible" in err

    def test_unbalanced_names_unit(self, ex1_csv, tmp_path):
        lines = ex1_csv.read_text().splitlines()
        path = tmp_path / "unbalanced.csv"
        path.write_text("\n".join(lines[:2] + lines[3:]) + "\n")
        code, _, err = run("estimate", "--input", path, "--gvar-col", "gvar")
        assert code == 1 and "A-0" in err


class TestJackknife:
    def test_example_2(self, ex2_csv):
        code, out, _ = run("jackknife", "--input", ex2_csv, "--gvar-col", "gvar",
                           "--format", "json")
        assert code == 0
        doc = json.loads(out)
        validate_report(doc)
        jk = doc["inference"][1]
        assert jk["method"] == "jackknife_cv3" and np.isfinite(jk["se"]) and jk["df"] == 5
        assert len(doc["loo_profile"]) == 6
        assert len(jk["jackknife"]["clusters"]) == 6

    def test_example_2_table(self, ex2_csv):
        code, out, _ = run("jackknife", "--input", ex2_csv, "--gvar-col", "gvar")
        assert code == 0 and "Cluster jackknife (CV3)" in out and "t(5) reference" in out

    def test_example_1_names_c(self, ex1_csv):
        code, _, err = run("jackknife", "--input", ex1_csv, "--gvar-col", "gvar")
        assert code == 2 and "'C'" in err

    def test_strict_dropout(self, dropout_csv):
        code, out, _ = run("jackknife", "--input", dropout_csv, "--gvar-col", "gvar")
        assert code == 0 and "drop A: ATT(2,2), ATT(2,3)" in out
        code, _, err = run("jackknife", "--input", dropout_csv, "--gvar-col", "gvar", "--strict")
        assert code == 2
        assert "ATT(2, 2)" in err and "ATT(3, 3)" in err


class TestBootstrapAndDiagnose:
    def test_bootstrap_json(self, ex2_csv):
        code, out, _ = run("bootstrap", "--input", ex2_csv, "--gvar-col", "gvar", "--B", 499,
                           "--format", "json")
        assert code == 0
        doc = json.loads(out)
        validate_report(doc)
        boot = doc["inference"][1]["bootstrap"]
        assert boot["B"] == 499 and len(boot["draws"]) == 499

    def test_bootstrap_small_b(self, ex2_csv):
        code, _, err = run("bootstrap", "--input", ex2_csv, "--gvar-col", "gvar", "--B", 10)
        assert code == 1 and "at least 99" in err

    def test_diagnose_csv(self, ex2_csv):
        code, out, _ = run("diagnose", "--input", ex2_csv, "--gvar-col", "gvar",
                           "--format", "csv")
        assert code == 0
        assert len(out.strip().splitlines()) == 7

    def test_diagnose_table(self, ex2_csv):
        code, out, _ = run("diagnose", "--input", ex2_csv, "--gvar-col", "gvar", "--k", 2)
        assert code == 0 and "Flagged clusters" in out and "> 2 se" in out


@pytest.mark.parametrize("command", ["estimate", "jackknife", "bootstrap", "diagnose"])
@pytest.mark.parametrize("fmt", ["table", "json", "csv"])
def test_outputs_do_not_depend_on_threads(ex2_csv, command, fmt):
    extra = ["--B", 499] if command in ("bootstrap", "estimate") else []
    if command == "estimate":
        extra += ["--method", "bootstrap"]
    args = [command, "--input", ex2_csv, "--gvar-col", "gvar", "--format", fmt,
            "--seed", 5] + extra
    a, b = run(*args, "--threads", 1), run(*args, "--threads", 3)
    assert a[0] == 0 and a[1] == b[1]
    assert run(*args, "--threads", 1)[1] == a[1]


class TestSimulate:
    def test_repeatable_files(self, tmp_path):
        outs = []
        for k, threads in enumerate((1, 2, 1)):
            d = tmp_path / f"run{k}"
            code, out, _ = run("simulate", "--R", 8, "--J", 1, "--reps", 10, "--seed", 7,
                               "--B", 99, "--out", d, "--threads", threads)
            assert code == 0
            outs.append(((d / "rejection.csv").read_bytes(), (d / "rejection.txt").read_bytes()))
        assert outs[0] == outs[1] == outs[2]

    def test_invalid_design(self):
        code, _, err = run("simulate", "--R", 4, "--J", 2, "--L", 2, "--reps", 2)
        assert code == 1 and "J + L" in err

    def test_json(self):
        code, out, _ = run("simulate", "--R", 8, "--J", 2, "--reps", 4, "--B", 99,
                           "--format", "json")
        assert code == 0
        doc = json.loads(out)
        validate_report(doc)
        assert len(doc["rejection_table"]) == 3

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("R = 16\nJ = 2\nreplications = 3\nbootstrap_B = 99\n")
        code, out, _ = run("simulate", "--config", cfg, "--format", "csv")
        assert code == 0
        assert out.splitlines()[1].startswith("16,2,2,asymptotic,3,")

    def test_design_grid(self):
        code, out, _ = run("simulate", "--grid", "paper", "--reps", 1, "--B", 99,
                           "--format", "csv")
        assert code == 0
        keys = {tuple(map(int, ln.split(",")[:2])) for ln in out.strip().splitlines()[1:]}
        assert keys == set(DESIGN_GRID) and len(keys) == 21

    def test_source_panel(self, tmp_path):
        rng = np.random.default_rng(0)
        gvar = {f"s{k:02d}": 0 for k in range(10)}
        path = tmp_path / "src.csv"
        path.write_text(panel_csv(make_panel(gvar, T=12, units=2, rng=rng)))
        code, out, err = run("simulate", "--source", path, "--R", 8, "--J", 1, "--reps", 3,
                             "--B", 99, "--format", "csv")
        assert code == 0, err
