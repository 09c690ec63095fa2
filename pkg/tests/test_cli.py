import json
from pathlib import Path

import numpy as np
import pytest

from sbps.cli import main
from sbps.io import write_dataset
from sbps.simulation import Sim1Config, generate_sim1


@pytest.fixture(scope="module")
def toy_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "toy.csv"
    data = generate_sim1(Sim1Config(R=3, n_per_group=30), 0, seed=3)
    write_dataset(data.dataset, path)
    return path


def fit_args(toy_csv, out, *extra):
    return ["fit", "--input", str(toy_csv), "--out", str(out),
            "--bootstrap", "8", "--restarts", "10", "--seed", "5", *extra]


class TestFitCommand:
    def test_outputs_written(self, toy_csv, tmp_path):
        out = tmp_path / "run"
        assert main(fit_args(toy_csv, out)) == 0
        for name in ("effects.csv", "balance.csv", "scope.csv",
                     "summary.txt", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "fit"
        assert len(manifest["scope_vector"]) == 3
        assert manifest["config"]["bootstrap"] == 8

    def test_effects_table_has_one_row_per_subgroup(self, toy_csv, tmp_path):
        out = tmp_path / "run"
        main(fit_args(toy_csv, out))
        from sbps.cli import read_table
        _, rows = read_table(out / "effects.csv")
        assert [row["subgroup"] for row in rows] == ["1", "2", "3"]
        assert all(row["label"] for row in rows)

    def test_rerun_is_byte_identical(self, toy_csv, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(fit_args(toy_csv, out1))
        main(fit_args(toy_csv, out2))
        for name in ("effects.csv", "balance.csv", "scope.csv", "summary.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_exhaustive_matches_enumeration_oracle(self, toy_csv, tmp_path):
        import itertools

        from sbps.io import read_dataset
        from sbps.propensity import ScopeVector, precompute_fits
        from sbps.search import evaluate

        out = tmp_path / "run"
        main(fit_args(toy_csv, out, "--search", "exhaustive"))
        manifest = json.loads((out / "manifest.json").read_text())

        ds = read_dataset(toy_csv).dataset
        cache = precompute_fits(ds)
        best = min(
            (evaluate(ds, cache, ScopeVector(v), "smd"), v.count(2), v)
            for v in itertools.product((1, 2), repeat=ds.R))
        assert list(best[2]) == manifest["scope_vector"]
        assert manifest["criterion_value"] == pytest.approx(best[0], abs=1e-10)

    def test_no_outcome_balance_only(self, toy_csv, tmp_path):
        import csv
        rows = list(csv.reader(open(toy_csv)))
        header = rows[0]
        keep = [i for i, h in enumerate(header) if h != "y"]
        path = tmp_path / "noy.csv"
        with open(path, "w", newline="") as handle:
            csv.writer(handle).writerows([[r[i] for i in keep] for r in rows])

        out = tmp_path / "run"
        assert main(["fit", "--input", str(path), "--out", str(out),
                     "--no-outcome", "--seed", "1"]) == 0
        assert (out / "balance.csv").exists()
        assert not (out / "effects.csv").exists()

    def test_bad_input_fails_with_nonzero_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("z,g,y,x1\nyes,1,2,3\n")
        code = main(["fit", "--input", str(bad), "--out",
                     str(tmp_path / "run")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_config_file_flags_override(self, toy_csv, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bootstrap = 8\nseed = 5\nrestarts = 10\n"
                       "criterion = psw\n")
        out = tmp_path / "run"
        assert main(["fit", "--input", str(toy_csv), "--out", str(out),
                     "--config", str(cfg), "--criterion", "smd"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["criterion"] == "smd"   # flag wins
        assert manifest["config"]["bootstrap"] == 8       # file applied
        assert manifest["seed"] == 5


def simulate_args(out, *extra):
    return ["simulate", "--out", str(out), "--subgroups", "3",
            "--per-group", "24", "--replicates", "3", "--bootstrap", "0",
            "--restarts", "8", "--model", "correct",
            "--methods", "traditional,sbps-smd", "--estimators", "direct",
            "--seed", "2", *extra]


class TestSimulateCommand:
    def test_outputs_and_shapes(self, tmp_path):
        out = tmp_path / "sim"
        assert main(simulate_args(out)) == 0
        from sbps.cli import read_table
        _, rows = read_table(out / "results_by_subgroup.csv")
        assert len(rows) == 2 * 3  # two cells x three subgroups
        _, summary = read_table(out / "results_summary.csv")
        assert len(summary) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"

    def test_preset_fills_defaults_without_overriding_flags(self, tmp_path):
        out = tmp_path / "sim"
        args = simulate_args(out) + ["--preset", "sim1-small"]
        assert main(args) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        # explicit flags kept, preset fills the rest
        assert manifest["config"]["replicates"] == 3
        assert manifest["config"]["restarts"] == 8

    def test_paper_preset_echoes_full_configuration(self, tmp_path, monkeypatch):
        # the full-scale preset must resolve to the published run sizes;
        # stub the harness so the test does not actually run for hours
        import sbps.cli as cli_module
        from sbps.simulation import PerformanceTable

        def stub(config):
            return PerformanceTable(cells=[], true_tau=np.zeros(config.dgp.R),
                                    model=config.model, V=config.V, B=config.B,
                                    seed=config.seed, scope_fractions={})

        monkeypatch.setattr(cli_module, "run_experiment", stub)
        out = tmp_path / "sim"
        assert main(["simulate", "--out", str(out), "--preset", "sim1-paper",
                     "--model", "correct", "--seed", "1"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        config = manifest["config"]
        assert config["replicates"] == 1000
        assert config["bootstrap"] == 1000
        assert config["restarts"] == 1000
        assert config["subgroups"] == 20
        assert config["per_group"] == 100

    def test_worker_count_invariance(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(simulate_args(out1))
        main(simulate_args(out2, "--workers", "2"))
        assert (out1 / "results_by_subgroup.csv").read_text().splitlines()[1:] \
            == (out2 / "results_by_subgroup.csv").read_text().splitlines()[1:]

    def test_shiw_like_dgp(self, tmp_path):
        rng = np.random.default_rng(4)
        cov = tmp_path / "cov.csv"
        lines = ["g,a,b"]
        for r in (1, 2):
            for _ in range(30):
                lines.append(f"{r},{rng.normal():.4f},{rng.normal():.4f}")
        cov.write_text("\n".join(lines) + "\n")
        out = tmp_path / "sim"
        code = main([
            "simulate", "--out", str(out), "--dgp", "shiw-like",
            "--covariates-csv", str(cov), "--delta", "0.3,0.5",
            "--alpha", "0.4,-0.2", "--beta0", "100", "--beta", "5,3",
            "--eta", "50,0", "--noise-sd", "5", "--drop-covariate", "b",
            "--replicates", "3", "--bootstrap", "0", "--restarts", "8",
            "--model", "both", "--methods", "sbps-smd",
            "--estimators", "direct", "--seed", "3"])
        assert code == 0
        from sbps.cli import read_table
        _, rows = read_table(out / "results_summary.csv")
        assert {row["model"] for row in rows} == {"correct", "misspecified"}


class TestReportCommand:
    def test_simulation_report_renders_figures(self, tmp_path):
        out = tmp_path / "sim"
        main(simulate_args(out))
        assert main(["report", "--run", str(out)]) == 0
        for name in ("abs_bias.png", "rmse.png", "coverage.png"):
            assert (out / name).exists()

    def test_fit_report_renders_figures(self, toy_csv, tmp_path):
        out = tmp_path / "run"
        main(fit_args(toy_csv, out))
        assert main(["report", "--run", str(out)]) == 0
        assert (out / "balance.png").exists()
        assert (out / "effects.png").exists()

    def test_balance_only_run_renders_balance_figure_only(self, toy_csv,
                                                          tmp_path):
        out = tmp_path / "run"
        main(fit_args(toy_csv, out, "--no-outcome"))
        assert main(["report", "--run", str(out)]) == 0
        assert (out / "balance.png").exists()
        assert not (out / "effects.png").exists()

    def test_report_does_not_recompute(self, toy_csv, tmp_path, monkeypatch):
        out = tmp_path / "run"
        main(fit_args(toy_csv, out))
        import sbps.pipeline as pipeline_module

        def boom(*a, **kw):
            raise AssertionError("report must not rerun the pipeline")

        monkeypatch.setattr(pipeline_module, "run_pipeline", boom)
        assert main(["report", "--run", str(out)]) == 0

    def test_missing_manifest(self, tmp_path, capsys):
        with pytest.raises(SystemExit):
            main(["report", "--run", str(tmp_path)])
