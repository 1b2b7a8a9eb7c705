import csv
import json

import pytest
from typer.testing import CliRunner

from pintsolve import main as cli
from pintsolve import precond
from pintsolve.main import app
from pintsolve.runner import TableRow
from pintsolve.verify import run_verify

runner = CliRunner()


@pytest.fixture
def quick_verify(monkeypatch):
    def run(scope, *, seed=0):
        return run_verify(scope, seed=seed, names=["core.dft_unitary", "precond.lambda_table"])

    monkeypatch.setattr(cli, "run_verify", run)


class TestPresetsCommand:
    def test_lists_all(self):
        result = runner.invoke(app, ["presets"])
        assert result.exit_code == 0
        for name in ("set1", "set2", "set3", "set4", "set5"):
            assert name in result.stdout


class TestSolveCommand:
    def test_writes_table(self, tmp_path):
        out = tmp_path / "table.csv"
        result = runner.invoke(
            app, ["solve", "--preset", "set1", "--nt", "8", "--nt", "6", "--no-error", "--out", str(out)]
        )
        assert result.exit_code == 0, result.stdout
        with out.open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert [row["N_t"] for row in rows] == ["8", "6"]
        assert all(row["status"] == "ok" for row in rows)
        assert (tmp_path / "table.meta.json").exists()

    def test_singular_row_reported(self, tmp_path):
        out = tmp_path / "singular.csv"
        args = ["solve", "-p", "III", "--nt", "8", "--precond", "P1", "--no-error", "-o", str(out)]
        result = runner.invoke(app, args)
        assert result.exit_code == 0
        with out.open(encoding="utf-8") as fh:
            (row,) = list(csv.DictReader(fh))
        assert row["status"] == "singular"
        assert row["Its"] == ""

    def test_requires_preset_or_config(self):
        result = runner.invoke(app, ["solve"])
        assert result.exit_code == 1
        assert "Error" in result.stdout

    def test_unknown_preset(self):
        result = runner.invoke(app, ["solve", "--preset", "set9", "--no-error"])
        assert result.exit_code == 1
        assert "not found" in result.stdout

    def test_batch_file(self, tmp_path):
        config = tmp_path / "batch.toml"
        table = tmp_path / "batch.csv"
        config.write_text(
            f'compute_error = false\ntable_path = "{table.as_posix()}"\n\n'
            '[run.a]\npreset = "set2"\nn_t = 6\n\n[run.b]\npreset = "set2"\nn_t = 4\n',
            encoding="utf-8",
        )
        result = runner.invoke(app, ["solve", "--config", str(config), "--parallel", "--threads", "2"])
        assert result.exit_code == 0, result.stdout
        with table.open(encoding="utf-8") as fh:
            assert [row["N_t"] for row in csv.DictReader(fh)] == ["6", "4"]

    def test_threads_flag_overrides_batch_file(self, tmp_path, monkeypatch):
        config = tmp_path / "threads.toml"
        config.write_text(
            'threads = 2\n\n[run.a]\npreset = "set2"\nn_t = 4\ncompute_error = false\n', encoding="utf-8"
        )
        seen = []

        def record(cfg, **kwargs):
            seen.append(cfg.threads)
            return TableRow(preset="set2", grid="uniform", N_t=cfg.n_t, DoFs=32, preconditioner="Palpha")

        monkeypatch.setattr(cli, "run_solve", record)
        result = runner.invoke(app, ["solve", "--config", str(config), "--threads", "3"])
        assert result.exit_code == 0, result.stdout
        assert seen == [3]

    def test_batch_file_threads_kept_without_flag(self, tmp_path, monkeypatch):
        config = tmp_path / "threads.toml"
        config.write_text('threads = 2\n\n[run.a]\npreset = "set2"\nn_t = 4\n', encoding="utf-8")
        seen = []

        def record(cfg, **kwargs):
            seen.append(cfg.threads)
            return TableRow(preset="set2", grid="uniform", N_t=cfg.n_t, DoFs=32, preconditioner="Palpha")

        monkeypatch.setattr(cli, "run_solve", record)
        assert runner.invoke(app, ["solve", "--config", str(config)]).exit_code == 0
        assert seen == [2]

    def test_seed_recorded_in_metadata(self, tmp_path):
        out = tmp_path / "seeded.csv"
        args = ["solve", "-p", "set2", "--nt", "4", "--no-error", "--seed", "11", "-o", str(out)]
        assert runner.invoke(app, args).exit_code == 0
        meta = json.loads((tmp_path / "seeded.meta.json").read_text(encoding="utf-8"))
        assert meta["seed"] == [11]

    def test_bad_batch_file(self, tmp_path):
        config = tmp_path / "bad.toml"
        config.write_text("not = [toml", encoding="utf-8")
        result = runner.invoke(app, ["solve", "--config", str(config)])
        assert result.exit_code == 1


class TestSpectrumCommand:
    def test_writes_files(self, tmp_path):
        result = runner.invoke(app, ["spectrum", "--preset", "set3", "--nt", "4", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.stdout
        assert "singular" in result.stdout
        assert (tmp_path / "set3_uniform_N4_Palpha.csv").exists()
        assert not (tmp_path / "set3_uniform_N4_P1.csv").exists()


class TestVerifyCommand:
    def test_json_summary(self, quick_verify, tmp_path):
        out = tmp_path / "verify.json"
        result = runner.invoke(app, ["verify", "--json", "--seed", "5", "--out", str(out)])
        assert result.exit_code == 0, result.stdout
        summary = json.loads(result.stdout)
        assert summary["seed"] == 5
        assert summary["n_passed"] == 2
        assert json.loads(out.read_text(encoding="utf-8")) == summary

    def test_failure_exit_code(self, monkeypatch):
        def run(scope, *, seed=0):
            return run_verify(scope, seed=seed, names=["precond.lambda_table"])

        tables = precond.eigenvalue_tables
        monkeypatch.setattr(cli, "run_verify", run)
        monkeypatch.setattr(
            precond, "eigenvalue_tables", lambda a, m: (tables(a, m)[0] * 2.0,) + tables(a, m)[1:]
        )
        result = runner.invoke(app, ["verify", "--scope", "core"])
        assert result.exit_code == 1
        assert "precond.lambda_table" in result.stdout


class TestBenchCommand:
    def test_table(self):
        result = runner.invoke(app, ["bench", "--preset", "set1", "--nt", "6", "--threads", "1"])
        assert result.exit_code == 0, result.stdout
        assert "sequential" in result.stdout
