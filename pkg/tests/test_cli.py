"""Batch command line: round trips, exit codes, applicability, determinism."""

import subprocess
import sys

import numpy as np
import pytest

from kooplab import cli
from kooplab.config import ConfigError, parse_config
from kooplab.consistency import read_reports_json, read_summary_csv
from kooplab.dynamics import builtin_system, default_grid, generate_dataset, load_dataset
from kooplab.formulations import fit_affine, fit_separable, load_model
from kooplab.observables import identity


def linear_raw(out_dir, **over):
    raw = {
        "schema_version": 1,
        "system": {"name": "linear"},
        "dataset": {"n_samples": 300, "seed": 7, "dt": 0.05, "kind": "discrete-pairs"},
        "dictionaries": {
            "state": {"kind": "identity", "dim": 2},
            "input": {"kind": "identity", "dim": 1, "var_prefix": "u"},
            "cross": {"kind": "monomial-joint", "state_dim": 2, "input_dim": 1,
                      "state_degree": 1, "input_degree": 1},
        },
        "formulations": ["affine", "separable", "joint"],
        "tolerance": 1e-6,
        "out_dir": str(out_dir),
    }
    raw.update(over)
    return raw


def bilinear_raw(out_dir, **over):
    raw = {
        "schema_version": 1,
        "system": {"name": "bilinear-discrete", "params": {"alpha": 0.9, "beta": 0.1}},
        "dataset": {"n_samples": 400, "seed": 3},
        "dictionaries": {
            "state": {"kind": "identity", "dim": 1},
            "input": {"kind": "identity", "dim": 1, "var_prefix": "u"},
            "cross": {"kind": "monomial-joint", "state_dim": 1, "input_dim": 1,
                      "state_degree": 1, "input_degree": 1},
        },
        "formulations": ["separable", "joint"],
        "tolerance": 1e-8,
        "out_dir": str(out_dir),
    }
    raw.update(over)
    return raw


class TestThreadCap:
    def test_absent_variable_is_a_no_op(self):
        env = {}
        cli._apply_thread_cap(env)
        assert env == {}

    def test_sets_every_blas_knob(self):
        env = {"KOOPLAB_THREADS": "2"}
        cli._apply_thread_cap(env)
        for var in cli._THREAD_ENV_VARS:
            assert env[var] == "2"

    def test_overrides_preexisting_values(self):
        env = {"KOOPLAB_THREADS": "2", "OMP_NUM_THREADS": "8"}
        cli._apply_thread_cap(env)
        assert env["OMP_NUM_THREADS"] == "2"

    @pytest.mark.parametrize("bad", ["zero", "0", "-1", "1.5", ""])
    def test_rejects_non_positive_integers(self, bad):
        with pytest.raises(cli.UsageError, match="KOOPLAB_THREADS"):
            cli._apply_thread_cap({"KOOPLAB_THREADS": bad})

    def test_cli_module_import_stays_numpy_free(self):
        # the cap can only bind if importing the front end does not pull numpy
        code = (
            "import sys; import kooplab.cli; "
            "assert 'numpy' not in sys.modules, 'numpy imported eagerly'; "
            "import kooplab; "
            "assert 'numpy' not in sys.modules; "
            "print('clean')"
        )
        proc = subprocess.run([sys.executable, "-c", code], capture_output=True,
                              text=True, cwd="/root/pkg")
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.strip() == "clean"


class TestMain:
    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["check", "--model", "m.json"])
        assert excinfo.value.code == 2

    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["transmogrify"])
        assert excinfo.value.code == 2

    def test_config_error_exits_2(self, tmp_path, capsys):
        rc = cli.main(["simulate", "--config", str(tmp_path / "absent.json")])
        assert rc == cli.EXIT_USAGE
        assert "no such file" in capsys.readouterr().err

    def test_tolerance_flag_must_be_positive(self, tmp_path, capsys):
        import json

        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(linear_raw(tmp_path)))
        rc = cli.main(["check", "--config", str(path), "--model", "m.json",
                       "--tolerance", "-1"])
        assert rc == cli.EXIT_USAGE


class TestSimulate:
    def test_round_trip_and_stdout(self, tmp_path, capsys):
        cfg = parse_config(linear_raw(tmp_path))
        assert cli.cmd_simulate(cfg) == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "300 samples" in out
        assert "redrawn" in out
        data = load_dataset(tmp_path / "dataset")
        assert data.n_samples == 300
        assert data.kind == "discrete-pairs"

    def test_same_seed_is_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            cfg = parse_config(linear_raw(tmp_path / sub))
            cli.cmd_simulate(cfg)
        for name in ("dataset.csv", "dataset.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_different_seed_changes_the_draw(self, tmp_path):
        cfg_a = parse_config(linear_raw(tmp_path / "a"))
        cfg_b = parse_config(linear_raw(tmp_path / "b"))
        cfg_b.dataset.seed = 8
        cli.cmd_simulate(cfg_a)
        cli.cmd_simulate(cfg_b)
        assert (tmp_path / "a/dataset.csv").read_bytes() != (tmp_path / "b/dataset.csv").read_bytes()

    def test_requires_dataset_section(self, tmp_path):
        raw = linear_raw(tmp_path)
        del raw["dataset"]
        cfg = parse_config(raw)
        with pytest.raises(ConfigError) as excinfo:
            cli.cmd_simulate(cfg)
        assert excinfo.value.path == "dataset"


class TestFit:
    def fit_linear(self, tmp_path, capsys=None, **over):
        cfg = parse_config(linear_raw(tmp_path, **over))
        cli.cmd_simulate(cfg)
        rc = cli.cmd_fit(cfg, tmp_path / "dataset.csv")
        return cfg, rc

    def test_writes_one_model_per_formulation(self, tmp_path, capsys):
        _, rc = self.fit_linear(tmp_path)
        assert rc == cli.EXIT_OK
        for variant in ("affine", "separable", "joint"):
            model = load_model(tmp_path / f"model-{variant}.json")
            assert model.variant == variant
            assert model.time_kind == "discrete"
        out = capsys.readouterr().out
        # table rows appear in nesting order
        assert out.index("affine") < out.index("separable") < out.index("joint")
        assert "train residual" in out

    def test_nesting_of_training_residuals(self, tmp_path):
        cfg = parse_config(bilinear_raw(tmp_path, formulations=["affine", "separable", "joint"]))
        cli.cmd_simulate(cfg)
        cli.cmd_fit(cfg, tmp_path / "dataset.csv")
        r = {v: load_model(tmp_path / f"model-{v}.json").training_residual
             for v in ("affine", "separable", "joint")}
        assert r["joint"] <= r["separable"] + 1e-12
        assert r["separable"] <= r["affine"] + 1e-12
        assert r["joint"] < 1e-10 < r["separable"]  # strict on this system

    def test_missing_dataset_file(self, tmp_path):
        cfg = parse_config(linear_raw(tmp_path))
        with pytest.raises(cli.UsageError, match="no dataset"):
            cli.cmd_fit(cfg, tmp_path / "nope.csv")

    def test_dimension_mismatch_names_both_sides(self, tmp_path):
        cfg = parse_config(linear_raw(tmp_path))
        cli.cmd_simulate(cfg)
        other = parse_config(bilinear_raw(tmp_path / "other"))
        with pytest.raises(cli.UsageError, match="do not match"):
            cli.cmd_fit(other, tmp_path / "dataset.csv")

    def test_fit_error_is_tagged_with_the_formulation(self, tmp_path):
        raw = linear_raw(tmp_path, formulations=["separable"])
        raw["dataset"]["control_kind"] = "zero"
        cfg = parse_config(raw)
        cli.cmd_simulate(cfg)
        with pytest.raises(cli.PipelineError, match=r"fit\[separable\]") as excinfo:
            cli.cmd_fit(cfg, tmp_path / "dataset.csv")
        assert "unidentifiable" in str(excinfo.value)

    def test_ridge_recovers_the_degenerate_fit(self, tmp_path):
        raw = linear_raw(tmp_path, formulations=[{"variant": "separable", "ridge": 1e-8}])
        raw["dataset"]["control_kind"] = "zero"
        cfg = parse_config(raw)
        cli.cmd_simulate(cfg)
        assert cli.cmd_fit(cfg, tmp_path / "dataset.csv") == cli.EXIT_OK

    def test_empty_formulations_rejected(self, tmp_path):
        raw = linear_raw(tmp_path)
        del raw["formulations"]
        cfg = parse_config(raw)
        with pytest.raises(ConfigError) as excinfo:
            cli.cmd_fit(cfg, tmp_path / "dataset.csv")
        assert excinfo.value.path == "formulations"


@pytest.fixture(scope="module")
def bilinear_run(tmp_path_factory):
    """One simulate+fit on the discrete bilinear map, shared across checks."""
    out = tmp_path_factory.mktemp("bsc")
    cfg = parse_config(bilinear_raw(out))
    cli.cmd_simulate(cfg)
    cli.cmd_fit(cfg, out / "dataset.csv")
    return out


class TestCheck:
    def test_exact_joint_model_is_consistent(self, bilinear_run, tmp_path, capsys):
        cfg = parse_config(bilinear_raw(tmp_path))
        rc = cli.cmd_check(cfg, bilinear_run / "model-joint.json")
        assert rc == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "overall: consistent" in out
        reports = read_reports_json(tmp_path / "reports.json")
        ids = {r.condition for r in reports}
        assert {"DEF2-CTRL-X", "DEF2-CTRL-U", "T5-C1", "T5-C2",
                "COR7-C1", "COR7-C2", "COR8-C1", "COR8-C2"} == ids

    def test_separable_model_fails_with_cor4_argmax(self, bilinear_run, tmp_path, capsys):
        cfg = parse_config(bilinear_raw(tmp_path))
        rc = cli.cmd_check(cfg, bilinear_run / "model-separable.json")
        assert rc == cli.EXIT_FAILURE
        out = capsys.readouterr().out
        assert "COR4-FXU" in out
        assert "overall: inconsistent" in out
        assert "skipped COR5" in out  # its f_xu = 0 hypothesis fails here
        rows = read_summary_csv(tmp_path / "summary.csv")
        cor4 = next(r for r in rows if r["condition"] == "COR4-FXU")
        assert cor4["max_residual"] == pytest.approx(0.2, abs=1e-12)

    def test_summary_csv_round_trips(self, bilinear_run, tmp_path):
        cfg = parse_config(bilinear_raw(tmp_path))
        cli.cmd_check(cfg, bilinear_run / "model-joint.json")
        rows = read_summary_csv(tmp_path / "summary.csv")
        assert [r["condition"] for r in rows][:2] == ["DEF2-CTRL-X", "DEF2-CTRL-U"]
        assert all(r["verdict"] == "consistent" for r in rows)

    def test_explicit_condition_list_filters_reports(self, bilinear_run, tmp_path):
        cfg = parse_config(bilinear_raw(tmp_path, checks=["COR4-FXU"]))
        rc = cli.cmd_check(cfg, bilinear_run / "model-separable.json")
        assert rc == cli.EXIT_FAILURE  # 0.2 cross term over a 1e-8 tolerance
        reports = read_reports_json(tmp_path / "reports.json")
        assert [r.condition for r in reports] == ["COR4-FXU"]

    def test_inapplicable_condition_names_the_mismatch(self, bilinear_run, tmp_path):
        cfg = parse_config(bilinear_raw(tmp_path, checks=["T2-C1"]))
        with pytest.raises(cli.UsageError, match="T2-C1") as excinfo:
            cli.cmd_check(cfg, bilinear_run / "model-separable.json")
        message = str(excinfo.value)
        assert "continuous-time separable" in message
        assert "discrete-time separable" in message

    def test_explicit_hypothesis_violation_propagates(self, bilinear_run, tmp_path):
        from kooplab.consistency import HypothesisViolationError

        cfg = parse_config(bilinear_raw(tmp_path, checks=["COR5-PAIRWISE-U"]))
        with pytest.raises(HypothesisViolationError, match="f_xu"):
            cli.cmd_check(cfg, bilinear_run / "model-separable.json")

    def test_def2_joint_requires_the_library_entry_point(self, bilinear_run, tmp_path):
        cfg = parse_config(bilinear_raw(tmp_path, checks=["DEF2-JOINT-X"]))
        with pytest.raises(cli.UsageError, match="check_def2_joint"):
            cli.cmd_check(cfg, bilinear_run / "model-joint.json")

    def test_continuous_model_against_discrete_system_rejected(self, tmp_path):
        raw = linear_raw(tmp_path, formulations=["affine"])
        raw["dataset"]["kind"] = "continuous-derivative"
        cfg = parse_config(raw)
        cli.cmd_simulate(cfg)
        cli.cmd_fit(cfg, tmp_path / "dataset.csv")
        other = parse_config(bilinear_raw(tmp_path / "other"))
        with pytest.raises(cli.UsageError, match="dimensions"):
            # dims differ too; a matching-dim discrete system gives the time error
            cli.cmd_check(other, tmp_path / "model-affine.json")

    def test_discrete_model_discretizes_a_continuous_system(self, tmp_path, capsys):
        cfg = parse_config(linear_raw(tmp_path))
        cli.cmd_simulate(cfg)
        cli.cmd_fit(cfg, tmp_path / "dataset.csv")
        rc = cli.cmd_check(cfg, tmp_path / "model-affine.json")
        assert rc == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "COR6-B" in out and "consistent" in out

    def test_missing_model_file(self, tmp_path):
        cfg = parse_config(linear_raw(tmp_path))
        with pytest.raises(cli.UsageError, match="no model file"):
            cli.cmd_check(cfg, tmp_path / "absent.json")

    def test_tolerance_override_flips_the_verdict(self, tmp_path):
        import json

        cfg_path = tmp_path / "cfg.json"
        json.dump(linear_raw(tmp_path), open(cfg_path, "w"))
        assert cli.main(["simulate", "--config", str(cfg_path)]) == 0
        assert cli.main(["fit", "--config", str(cfg_path),
                         "--dataset", str(tmp_path / "dataset.csv")]) == 0
        model = str(tmp_path / "model-joint.json")
        assert cli.main(["check", "--config", str(cfg_path), "--model", model]) == 0
        rc = cli.main(["check", "--config", str(cfg_path), "--model", model,
                       "--tolerance", "1e-18"])
        assert rc == cli.EXIT_FAILURE  # even roundoff fails at 1e-18


class TestApplicabilityResolution:
    def continuous_fit(self, variant):
        system = builtin_system("linear")
        data = generate_dataset(system, 300, seed=5)
        if variant == "affine":
            model = fit_affine(data, identity(2))
        else:
            model = fit_separable(data, identity(2), identity(1, "u"))
        return system, model

    def test_separable_continuous_families(self):
        system, model = self.continuous_fit("separable")
        grid = default_grid(system, points_per_axis=5)
        reports, skipped = cli._run_checks(system, model, grid, 1e-6, 0, None)
        assert {r.condition for r in reports} == {
            "DEF1-CTRL", "T2-C1", "T2-C2", "T2-C3", "COR1-FXU", "COR2-PAIRWISE",
        }
        assert skipped == []
        assert all(r.verdict == "consistent" for r in reports)

    def test_affine_continuous_families(self):
        system, model = self.continuous_fit("affine")
        grid = default_grid(system, points_per_axis=5)
        reports, _ = cli._run_checks(system, model, grid, 1e-6, 0, None)
        assert {r.condition for r in reports} == {
            "DEF1-CTRL", "COR1-FXU", "COR2-PAIRWISE", "COR3-KMA-B", "COR3-KMA-L",
        }
        assert all(r.verdict == "consistent" for r in reports)


class TestCompare:
    def test_bilinear_comparison(self, tmp_path, capsys):
        cfg = parse_config(bilinear_raw(tmp_path))
        rc = cli.cmd_compare(cfg)
        assert rc == cli.EXIT_OK

        import csv

        with open(tmp_path / "comparison.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["formulation"] for r in rows] == ["separable", "joint"]
        assert set(rows[0]) == {"formulation", "train_residual", "rmse_1", "rmse_5",
                                "rmse_20", "worst_consistency", "verdict"}
        sep, joint = rows
        assert float(joint["rmse_20"]) < float(sep["rmse_20"]) / 2.0
        assert joint["verdict"] == "consistent"
        assert sep["verdict"] == "inconsistent"

        # gnuplot whitespace files: commented header, blank-line separated blocks
        for variant in ("separable", "joint"):
            text = (tmp_path / f"trajectory-{variant}.dat").read_text()
            assert text.startswith("#")
            assert "\n\n" in text
            first_data = next(l for l in text.splitlines() if l and not l.startswith("#"))
            cells = first_data.split()
            assert len(cells) == 2 + 2 * 1  # k, t, true, pred
            [float(c) for c in cells]  # every cell must parse as a bare number

    def test_linear_models_all_agree(self, tmp_path):
        cfg = parse_config(linear_raw(tmp_path))
        cli.cmd_compare(cfg)

        import csv

        with open(tmp_path / "comparison.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["formulation"] for r in rows] == ["affine", "separable", "joint"]
        for row in rows:
            assert float(row["rmse_20"]) < 1e-6
            assert float(row["worst_consistency"]) < 1e-6
            assert row["verdict"] == "consistent"

    def test_needs_two_formulations(self, tmp_path):
        cfg = parse_config(bilinear_raw(tmp_path, formulations=["joint"]))
        with pytest.raises(ConfigError) as excinfo:
            cli.cmd_compare(cfg)
        assert excinfo.value.path == "formulations"

    def test_rejects_eigen(self, tmp_path):
        raw = linear_raw(tmp_path, formulations=["affine", "eigen"])
        cfg = parse_config(raw)
        with pytest.raises(ConfigError) as excinfo:
            cli.cmd_compare(cfg)
        assert excinfo.value.path == "formulations[1].variant"

    def test_byte_identical_reruns(self, tmp_path):
        for sub in ("a", "b"):
            cfg = parse_config(bilinear_raw(tmp_path / sub))
            cli.cmd_compare(cfg)
        for name in ("comparison.csv", "trajectory-separable.dat", "trajectory-joint.dat",
                     "dataset.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestDemo:
    def test_registry(self):
        assert cli.DEMO_NAMES == (
            "corollary1-obstruction",
            "joint-rescues-bilinear",
            "kaiser-eigen",
            "williams-equivalence",
            "discussion-gxfu",
        )

    def test_unknown_name_lists_the_registry(self):
        with pytest.raises(cli.UsageError) as excinfo:
            cli.cmd_demo("nope")
        message = str(excinfo.value)
        for name in cli.DEMO_NAMES:
            assert name in message

    @pytest.mark.parametrize("name", [
        "corollary1-obstruction",
        "joint-rescues-bilinear",
        "kaiser-eigen",
        "williams-equivalence",
        "discussion-gxfu",
    ])
    def test_each_demo_runs_and_interprets(self, name, tmp_path, capsys):
        rc = cli.cmd_demo(name, out_dir=tmp_path / name)
        assert rc == cli.EXIT_OK
        text = (tmp_path / name / "interpretation.txt").read_text()
        assert len(text) > 200
        assert capsys.readouterr().out.strip() != ""

    def test_interpretation_references_condition_ids(self, tmp_path):
        cli.cmd_demo("corollary1-obstruction", out_dir=tmp_path)
        text = (tmp_path / "interpretation.txt").read_text()
        assert "COR1-FXU" in text

    def test_rerun_is_byte_identical(self, tmp_path):
        cli.cmd_demo("corollary1-obstruction", out_dir=tmp_path / "a")
        cli.cmd_demo("corollary1-obstruction", out_dir=tmp_path / "b")
        for name in ("interpretation.txt", "reports.json", "summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
