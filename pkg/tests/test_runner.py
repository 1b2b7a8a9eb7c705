import csv
import json
import math

import pytest

from pintsolve.config import settings
from pintsolve.errors import ConfigError
from pintsolve.precond import AlphaPolicy
from pintsolve.runner import (
    TABLE_COLUMNS,
    OutputConfig,
    PreconditionerKind,
    RowStatus,
    RunConfig,
    TableRow,
    bench,
    load_batch,
    run_batch,
    run_solve,
    run_spectrum,
    write_table,
)
from pintsolve.spatial import GridKind


class TestRunConfig:
    def test_defaults_follow_settings(self):
        cfg = RunConfig(preset="set1", n_t=8)
        assert cfg.preconditioner is PreconditionerKind.PALPHA
        assert cfg.restart == settings.gmres_restart
        assert cfg.tol == settings.gmres_tol

    def test_stretched_alias(self):
        assert RunConfig(preset="set1", n_t=8, grid_kind="stretched").grid_kind is GridKind.NONUNIFORM

    @pytest.mark.parametrize("field,value", [("n_t", 0), ("alpha", 0.0), ("alpha", 1.5), ("delta", 1.0)])
    def test_rejects(self, field, value):
        with pytest.raises(ValueError):
            RunConfig(**{"preset": "set1", "n_t": 8, field: value})

    def test_resolved_alpha(self):
        tau, t_final = 0.01, 1.0
        assert RunConfig(preset="set1", n_t=8, preconditioner="none").resolved_alpha(tau, t_final) is None
        assert RunConfig(preset="set1", n_t=8, preconditioner="P1").resolved_alpha(tau, t_final) == 1.0
        assert RunConfig(preset="set1", n_t=8, alpha=0.01).resolved_alpha(tau, t_final) == 0.01
        cfg = RunConfig(preset="set1", n_t=8, alpha_policy=AlphaPolicy.DELTA_SQRT_TAU_OVER_T, delta=0.5)
        assert cfg.resolved_alpha(tau, t_final) == pytest.approx(0.05)


class TestRunSolve:
    def test_palpha_row(self):
        row = run_solve(RunConfig(preset="set1", n_t=8, compute_error=False))
        assert row.status is RowStatus.OK
        assert row.DoFs == 8 * 8 * 4
        assert row.alpha == settings.default_alpha
        assert 1 <= row.Its <= 10
        assert row.Err is None
        assert row.marker == ""

    def test_error_against_given_reference(self):
        row = run_solve(RunConfig(preset="set1", n_t=8), reference=10.0)
        assert row.Err is not None and math.isfinite(row.Err)

    def test_singular_p1_row(self):
        row = run_solve(RunConfig(preset="set3", n_t=8, preconditioner="P1", compute_error=False))
        assert row.status is RowStatus.SINGULAR
        assert row.marker == "‡"
        assert row.Its is None

    def test_no_convergence_row(self):
        cfg = RunConfig(preset="set1", n_t=8, preconditioner="none", max_iters=1, compute_error=False)
        row = run_solve(cfg)
        assert row.status is RowStatus.NO_CONVERGENCE
        assert row.marker == "†"
        assert row.Its == 1

    def test_batch_keeps_order(self):
        configs = [
            RunConfig(name=f"r{n}", preset="set2", n_t=n, compute_error=False) for n in (8, 6, 4)
        ]
        rows = run_batch(configs, parallel=True, threads=2)
        assert [row.N_t for row in rows] == [8, 6, 4]


class TestBatchFile:
    def test_defaults_and_outputs(self, tmp_path):
        path = tmp_path / "batch.toml"
        path.write_text(
            """
preconditioner = "Palpha"
tol = 1e-8

[run.small]
preset = "set1"
n_t = 8
table_path = "out/table.csv"

[run.stretched]
preset = "II"
n_t = 12
grid_kind = "stretched"
preconditioner = "P1"
""",
            encoding="utf-8",
        )
        configs = load_batch(path)
        assert [c.name for c in configs] == ["small", "stretched"]
        assert configs[0].tol == 1e-8 and configs[1].tol == 1e-8
        assert configs[0].outputs.table_path.name == "table.csv"
        assert configs[1].preconditioner is PreconditionerKind.P1
        assert configs[1].grid_kind is GridKind.NONUNIFORM

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_batch(tmp_path / "absent.toml")

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[run.x\npreset = 1", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_batch(path)

    def test_no_runs(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text('preset = "set1"\n', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_batch(path)

    def test_invalid_run(self, tmp_path):
        path = tmp_path / "invalid.toml"
        path.write_text('[run.x]\npreset = "set1"\nn_t = -4\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="'x'"):
            load_batch(path)


class TestWriteTable:
    def test_csv_and_sidecar(self, tmp_path):
        rows = [
            TableRow(preset="set1", grid="uniform", N_t=48, DoFs=55_296, preconditioner="Palpha",
                     alpha=1e-3, Its=4, Err=1.5e-3, wall_time=2.0),
            TableRow(preset="set3", grid="uniform", N_t=48, DoFs=55_296, preconditioner="P1",
                     alpha=1.0, status=RowStatus.SINGULAR),
        ]
        configs = [RunConfig(preset="set1", n_t=48, seed=3)]
        path = write_table(rows, tmp_path / "tables" / "run.csv", configs)
        with path.open(encoding="utf-8") as fh:
            records = list(csv.reader(fh))
        assert tuple(records[0]) == TABLE_COLUMNS
        assert records[1][TABLE_COLUMNS.index("Its")] == "4"
        assert records[2][TABLE_COLUMNS.index("Its")] == ""
        assert records[2][-1] == "singular"

        meta = json.loads((tmp_path / "tables" / "run.meta.json").read_text(encoding="utf-8"))
        assert meta["columns"] == list(TABLE_COLUMNS)
        assert meta["seed"] == [3]
        assert meta["markers"] == {"singular": "‡", "no_convergence": "†"}

    def test_output_config_defaults(self):
        assert OutputConfig().table_path is None


class TestSpectrumFiles:
    def _rows(self, path):
        with path.open(encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    def test_four_files(self, tmp_path):
        files = run_spectrum(RunConfig(preset="set1", n_t=8), tmp_path)
        assert set(files) == {"A", "M", "P1", "Palpha"}
        assert files["Palpha"].name == "set1_uniform_N8_Palpha.csv"
        for path in files.values():
            rows = self._rows(path)
            assert list(rows[0]) == ["re", "im", "class"]
        assert len(self._rows(files["A"])) == 32
        assert len(self._rows(files["M"])) == 256
        labels = {row["class"] for row in self._rows(files["Palpha"])}
        assert labels <= {"unit", "annulus", "violation"}

    def test_structured_path_past_cap(self, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "oracle_cap", 100)
        files = run_spectrum(RunConfig(preset="set1", n_t=8), tmp_path)
        rows = self._rows(files["Palpha"])
        assert len(rows) == 256
        assert sum(row["class"] == "unit" for row in rows) == 224

    def test_singular_p1_skipped(self, tmp_path):
        files = run_spectrum(RunConfig(preset="set3", n_t=8), tmp_path)
        assert files["P1"] is None
        assert files["Palpha"].exists()

    def test_default_directory(self):
        files = run_spectrum(RunConfig(preset="set2", n_t=4))
        assert files["M"].parent == settings.output_dir


def test_bench_rows():
    rows = bench(RunConfig(preset="set1", n_t=8), thread_counts=(1, 2))
    assert [(row.method, row.threads) for row in rows] == [
        ("sequential", 1),
        ("P1", 1),
        ("Palpha", 1),
        ("P1", 2),
        ("Palpha", 2),
    ]
    assert all(row.status is RowStatus.OK for row in rows)
    assert rows[2].Its <= rows[1].Its


def test_bench_marks_singular_p1():
    rows = bench(RunConfig(preset="set4", n_t=8))
    assert rows[1].status is RowStatus.SINGULAR
    assert rows[2].status is RowStatus.OK
