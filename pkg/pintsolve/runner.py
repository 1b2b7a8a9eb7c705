"""Experiment runs: iteration-table rows, eigenvalue dumps and timing comparisons."""

from __future__ import annotations

import csv
import json
import logging
import time
import tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator

from .aao import AaoSystem, apply_M, solve_sequential
from .analysis import EigenClass, SpectrumReport, matrix_spectrum, preconditioned_spectrum, space_spectrum
from .config import resolve_threads, settings
from .core import parallel_map
from .errors import ConfigError, NoConvergence, SingularPreconditioner
from .krylov import GmresConfig, GmresReport, gmres_right
from .precond import AlphaPolicy, AlphaPreconditioner, alpha_from_policy
from .presets import load_preset
from .pricing import preset_price, reference_level_for, reference_price, relative_error
from .spatial import GridKind

log = logging.getLogger(__name__)

TABLE_COLUMNS = (
    "preset",
    "grid",
    "N_t",
    "DoFs",
    "preconditioner",
    "alpha",
    "Its",
    "Err",
    "wall_time",
    "status",
)


class PreconditionerKind(str, Enum):
    P1 = "P1"
    PALPHA = "Palpha"
    NONE = "none"


class RowStatus(str, Enum):
    OK = "ok"
    SINGULAR = "singular"
    NO_CONVERGENCE = "no_convergence"


class OutputConfig(BaseModel):
    table_path: Optional[Path] = None
    spectrum_path: Optional[Path] = None
    reference_level: Optional[int] = Field(None, ge=0)


class RunConfig(BaseModel):
    """One experiment: preset, mesh, preconditioner and solver settings."""

    name: str = "run"
    preset: str = Field(..., description="Preset name (set1..set5, I..V) or JSON path")
    n_t: int = Field(..., ge=1, description="Number of time steps; N_s = N_t, N_v = N_t/2")
    alpha: Optional[float] = Field(None, gt=0.0, le=1.0)
    alpha_policy: AlphaPolicy = AlphaPolicy.FIXED
    delta: Optional[float] = Field(None, gt=0.0, lt=1.0)
    preconditioner: PreconditionerKind = PreconditionerKind.PALPHA
    grid_kind: GridKind = GridKind.UNIFORM
    threads: Optional[int] = Field(None, ge=1)
    seed: int = Field(0, description="Recorded in table metadata only")
    restart: int = Field(default_factory=lambda: settings.gmres_restart, ge=1)
    tol: float = Field(default_factory=lambda: settings.gmres_tol, gt=0.0, lt=1.0)
    max_iters: int = Field(default_factory=lambda: settings.gmres_max_iters, ge=1)
    compute_error: bool = True
    outputs: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator("grid_kind")
    @classmethod
    def _two_kinds(cls, value: GridKind) -> GridKind:
        return GridKind.NONUNIFORM if value is GridKind.STRETCHED else value

    def gmres_config(self) -> GmresConfig:
        return GmresConfig(restart=self.restart, tol=self.tol, max_total_iters=self.max_iters)

    def resolved_alpha(self, tau: float, t_final: float) -> Optional[float]:
        if self.preconditioner is PreconditionerKind.NONE:
            return None
        if self.preconditioner is PreconditionerKind.P1:
            return 1.0
        return alpha_from_policy(self.alpha_policy, tau, t_final, alpha=self.alpha, delta=self.delta)


class TableRow(BaseModel):
    preset: str
    grid: str
    N_t: int
    DoFs: int
    preconditioner: str
    alpha: Optional[float] = None
    Its: Optional[int] = None
    Err: Optional[float] = None
    wall_time: float = 0.0
    status: RowStatus = RowStatus.OK

    @property
    def marker(self) -> str:
        return {RowStatus.OK: "", RowStatus.SINGULAR: "‡", RowStatus.NO_CONVERGENCE: "†"}[self.status]

    def csv_values(self) -> list[str]:
        def fmt(value: Any) -> str:
            if value is None:
                return ""
            if isinstance(value, float):
                return f"{value:.6e}"
            if isinstance(value, Enum):
                return str(value.value)
            return str(value)

        return [fmt(getattr(self, column)) for column in TABLE_COLUMNS]


def create_preconditioner(
    kind: PreconditionerKind, alpha: Optional[float], system: AaoSystem, threads: Optional[int] = None
) -> Optional[AlphaPreconditioner]:
    """Factory for the preconditioner named by a run config."""
    if kind is PreconditionerKind.NONE:
        return None
    assert alpha is not None
    return AlphaPreconditioner.build(alpha, system, threads=threads)


def solve_system(
    system: AaoSystem, precond: Optional[AlphaPreconditioner], cfg: GmresConfig
) -> tuple[Any, GmresReport]:
    """Right-preconditioned GMRES on ``M u = b``."""
    return gmres_right(
        lambda u: apply_M(system, u),
        None if precond is None else precond.apply_inverse,
        system.rhs.data,
        cfg,
    )


def run_solve(cfg: RunConfig, *, reference: Optional[float] = None) -> TableRow:
    """One table row. Singular preconditioners and stalled GMRES become marked rows."""
    preset = load_preset(cfg.preset)
    threads = resolve_threads(cfg.threads)
    problem, system = preset.assemble(cfg.n_t, cfg.grid_kind)
    alpha = cfg.resolved_alpha(system.tau, system.t_final)
    row = TableRow(
        preset=preset.name,
        grid=cfg.grid_kind.value,
        N_t=cfg.n_t,
        DoFs=system.size,
        preconditioner=cfg.preconditioner.value,
        alpha=alpha,
    )

    start = time.perf_counter()
    try:
        precond = create_preconditioner(cfg.preconditioner, alpha, system, threads)
    except SingularPreconditioner as exc:
        log.warning("%s: %s", cfg.name, exc)
        row.status = RowStatus.SINGULAR
        row.wall_time = time.perf_counter() - start
        return row
    solution, report = solve_system(system, precond, cfg.gmres_config())
    row.wall_time = time.perf_counter() - start
    row.Its = report.iterations
    try:
        report.raise_for_status(solution)
    except NoConvergence as exc:
        log.warning("%s: %s", cfg.name, exc)
        row.status = RowStatus.NO_CONVERGENCE
        return row

    if cfg.compute_error:
        if reference is None:
            level = cfg.outputs.reference_level
            reference = reference_price(preset, reference_level_for(cfg.n_t, level))
        row.Err = relative_error(preset_price(preset, problem, system, solution), reference)
    return row


def run_batch(
    configs: Iterable[RunConfig], *, parallel: bool = False, threads: Optional[int] = None
) -> list[TableRow]:
    """Rows for each config, in order; independent runs share a thread pool when ``parallel``."""
    configs = list(configs)
    workers = resolve_threads(threads) if parallel else 1
    return parallel_map(run_solve, configs, workers)


def load_batch(path: Path | str) -> list[RunConfig]:
    """Parse a TOML batch file with one ``[run.<name>]`` table per run.

    Top-level keys other than ``run`` are defaults shared by every run.
    """
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"Config file '{path}' not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid config file {path}: {e}") from e
    runs = data.pop("run", None)
    if not isinstance(runs, dict) or not runs:
        raise ConfigError(f"{path} defines no [run.<name>] sections")
    configs = []
    for name, section in runs.items():
        merged = {**data, **section, "name": name}
        outputs = merged.pop("outputs", {})
        for key in ("table_path", "spectrum_path", "reference_level"):
            if key in merged:
                outputs[key] = merged.pop(key)
        try:
            configs.append(RunConfig(**merged, outputs=OutputConfig(**outputs)))
        except ValidationError as e:
            raise ConfigError(f"Invalid run '{name}' in {path}: {e}") from e
    return configs


def table_metadata(configs: Iterable[RunConfig]) -> dict[str, Any]:
    configs = list(configs)
    first = configs[0] if configs else None
    return {
        "columns": list(TABLE_COLUMNS),
        "convention": "N_t, N_s, N_v are interval counts with N_t = N_s = 2 N_v",
        "unknowns": "s-nodes 1..N_s x v-nodes 0..N_v-1; DoFs = N_t * N_s * N_v",
        "alpha_policy": sorted({c.alpha_policy.value for c in configs}),
        "tol": first.tol if first else settings.gmres_tol,
        "restart": first.restart if first else settings.gmres_restart,
        "seed": sorted({c.seed for c in configs}),
        "markers": {"singular": "‡", "no_convergence": "†"},
    }


def write_table(rows: Iterable[TableRow], path: Path | str, configs: Iterable[RunConfig] = ()) -> Path:
    """CSV with the fixed column order plus a ``.meta.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_values())
    meta = path.with_name(path.stem + ".meta.json")
    meta.write_text(json.dumps(table_metadata(configs), indent=2), encoding="utf-8")
    return path


def _write_spectrum(path: Path, eigenvalues: Iterable[complex], labels: Iterable[str]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("re", "im", "class"))
        for lam, label in zip(eigenvalues, labels):
            writer.writerow((repr(float(lam.real)), repr(float(lam.imag)), label))
    return path


def _report_labels(report: SpectrumReport) -> list[str]:
    return [label.value for label in report.labels]


def run_spectrum(cfg: RunConfig, out_dir: Path | str | None = None) -> dict[str, Optional[Path]]:
    """Scatter files for ``M``, ``P1^{-1} M``, ``P_alpha^{-1} M`` and ``At``.

    A singular ``P1`` leaves its entry as ``None``.
    """
    preset = load_preset(cfg.preset)
    out_dir = Path(out_dir or cfg.outputs.spectrum_path or settings.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, system = preset.assemble(cfg.n_t, cfg.grid_kind)
    stem = f"{preset.name}_{cfg.grid_kind.value}_N{cfg.n_t}"
    threads = resolve_threads(cfg.threads)
    files: dict[str, Optional[Path]] = {}

    plain = EigenClass.PLAIN.value
    eig_a = space_spectrum(system)
    files["A"] = _write_spectrum(out_dir / f"{stem}_A.csv", eig_a, [plain] * len(eig_a))
    eig_m = matrix_spectrum(system)
    files["M"] = _write_spectrum(out_dir / f"{stem}_M.csv", eig_m, [plain] * len(eig_m))

    try:
        p1 = preconditioned_spectrum(system, 1.0, threads=threads)
        files["P1"] = _write_spectrum(out_dir / f"{stem}_P1.csv", p1.eigenvalues, _report_labels(p1))
    except SingularPreconditioner as exc:
        log.warning("P1 spectrum skipped: %s", exc)
        files["P1"] = None

    alpha = alpha_from_policy(cfg.alpha_policy, system.tau, system.t_final, alpha=cfg.alpha, delta=cfg.delta)
    pa = preconditioned_spectrum(system, alpha, threads=threads)
    files["Palpha"] = _write_spectrum(out_dir / f"{stem}_Palpha.csv", pa.eigenvalues, _report_labels(pa))
    return files


class BenchRow(BaseModel):
    preset: str
    N_t: int
    method: str
    threads: int
    wall_time: Optional[float] = None
    Its: Optional[int] = None
    status: RowStatus = RowStatus.OK


def bench(cfg: RunConfig, thread_counts: Iterable[int] = (1,)) -> list[BenchRow]:
    """Wall-clock of sequential CN, P1-GMRES and P_alpha-GMRES at each thread count."""
    preset = load_preset(cfg.preset)
    _, system = preset.assemble(cfg.n_t, cfg.grid_kind)
    alpha = alpha_from_policy(cfg.alpha_policy, system.tau, system.t_final, alpha=cfg.alpha, delta=cfg.delta)
    gmres_cfg = cfg.gmres_config()
    rows: list[BenchRow] = []

    start = time.perf_counter()
    solve_sequential(system)
    rows.append(BenchRow(preset=preset.name, N_t=cfg.n_t, method="sequential", threads=1,
                         wall_time=time.perf_counter() - start))

    for threads in thread_counts:
        for method, value in (("P1", 1.0), ("Palpha", alpha)):
            start = time.perf_counter()
            try:
                precond = AlphaPreconditioner.build(value, system, threads=threads)
            except SingularPreconditioner:
                rows.append(BenchRow(preset=preset.name, N_t=cfg.n_t, method=method, threads=threads,
                                     status=RowStatus.SINGULAR))
                continue
            _, report = solve_system(system, precond, gmres_cfg)
            rows.append(
                BenchRow(
                    preset=preset.name,
                    N_t=cfg.n_t,
                    method=method,
                    threads=threads,
                    wall_time=time.perf_counter() - start,
                    Its=report.iterations,
                    status=RowStatus.OK if report.converged else RowStatus.NO_CONVERGENCE,
                )
            )
    return rows
