from pathlib import Path
from typing import List, Optional

import typer
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from .config import resolve_threads
from .console import console, setup_logging
from .errors import PintError
from .precond import AlphaPolicy
from .presets import list_presets
from .runner import (
    PreconditionerKind,
    RunConfig,
    TableRow,
    bench as run_bench,
    load_batch,
    run_batch,
    run_solve,
    run_spectrum,
    write_table,
)
from .spatial import GridKind
from .verify import Scope, run_verify

app = typer.Typer(
    name="pintsolve",
    help="Parallel-in-time Crank-Nicolson solver with block alpha-circulant preconditioning",
    rich_markup_mode="rich",
)


def fail(message: str) -> None:
    console.print(f"[red]Error: {message}[/red]")
    raise typer.Exit(1)


def render_rows(rows: List[TableRow], title: str) -> Table:
    table = Table(title=title)
    for column in ("Preset", "Grid", "N_t", "DoFs", "Precond", "alpha", "Its", "Err", "Time (s)", "Status"):
        table.add_column(column, justify="right" if column not in ("Preset", "Grid", "Status") else "left")
    for row in rows:
        its = "-" if row.Its is None else f"{row.Its}{row.marker}"
        table.add_row(
            row.preset,
            row.grid,
            str(row.N_t),
            f"{row.DoFs:,}",
            row.preconditioner,
            "-" if row.alpha is None else f"{row.alpha:.1e}",
            its if row.status.value != "singular" else row.marker,
            "-" if row.Err is None else f"{row.Err:.3e}",
            f"{row.wall_time:.2f}",
            row.status.value,
        )
    return table


@app.command()
def solve(
    preset: Optional[str] = typer.Option(
        None, "--preset", "-p", help="Preset name (set1..set5, I..V) or path to a JSON preset"
    ),
    nt: List[int] = typer.Option([48], "--nt", help="Number of time steps (N_t = N_s = 2 N_v); repeatable"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Fixed alpha (default from settings)"),
    alpha_policy: AlphaPolicy = typer.Option(AlphaPolicy.FIXED, "--alpha-policy", help="fixed or delta_sqrt_tau_over_T"),
    delta: Optional[float] = typer.Option(None, "--delta", help="delta of the alpha policy"),
    precond: List[PreconditionerKind] = typer.Option(
        [PreconditionerKind.PALPHA], "--precond", help="P1, Palpha or none; repeatable"
    ),
    grid: GridKind = typer.Option(GridKind.UNIFORM, "--grid", help="uniform or nonuniform"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="CSV table path"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads (overrides PINTSOLVE_THREADS)"),
    seed: int = typer.Option(
        0, "--seed", help="Seed written to the table metadata; the solve itself draws no random numbers"
    ),
    config: Optional[Path] = typer.Option(None, "--config", help="TOML batch file with [run.<name>] sections"),
    parallel: bool = typer.Option(False, "--parallel", help="Run independent batch entries concurrently"),
    no_error: bool = typer.Option(False, "--no-error", help="Skip the reference price and Err column"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Solve the all-at-once system for a preset and print the iteration table."""
    setup_logging(verbose)

    try:
        if config is not None:
            if verbose:
                console.print(f"[blue]Loading batch file {config}...[/blue]")
            configs = load_batch(config)
            if threads is not None:
                configs = [c.model_copy(update={"threads": threads}) for c in configs]
        elif preset is not None:
            configs = [
                RunConfig(
                    name=f"{preset}-{n}-{kind.value}",
                    preset=preset,
                    n_t=n,
                    alpha=alpha,
                    alpha_policy=alpha_policy,
                    delta=delta,
                    preconditioner=kind,
                    grid_kind=grid,
                    threads=threads,
                    seed=seed,
                    compute_error=not no_error,
                )
                for n in nt
                for kind in precond
            ]
        else:
            fail("either --preset or --config is required")
            return
    except PintError as e:
        fail(str(e))
        return
    if verbose:
        console.print(f"[green]✓[/green] {len(configs)} run(s) configured")

    rows: List[TableRow] = []
    try:
        if parallel:
            with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console) as progress:
                progress.add_task(description=f"Running {len(configs)} runs...", total=None)
                rows = run_batch(configs, parallel=True, threads=threads)
        else:
            for cfg in configs:
                with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console) as progress:
                    progress.add_task(description=f"Solving {cfg.name}...", total=None)
                    rows.append(run_solve(cfg))
    except PintError as e:
        fail(str(e))
        return

    console.print(render_rows(rows, "Right-preconditioned GMRES"))

    table_path = out or next((c.outputs.table_path for c in configs if c.outputs.table_path), None)
    if table_path is not None:
        write_table(rows, table_path, configs)
        console.print(f"[green]✓[/green] Table saved to {table_path}")


@app.command()
def spectrum(
    preset: str = typer.Option(..., "--preset", "-p", help="Preset name or path"),
    nt: int = typer.Option(36, "--nt", help="Number of time steps (N_t = N_s = 2 N_v)"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Fixed alpha"),
    alpha_policy: AlphaPolicy = typer.Option(AlphaPolicy.FIXED, "--alpha-policy"),
    grid: GridKind = typer.Option(GridKind.UNIFORM, "--grid", help="uniform or nonuniform"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory for the CSV files"),
    threads: Optional[int] = typer.Option(None, "--threads"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Write eigenvalue scatter files (re,im,class) for M, P1^-1 M, P_alpha^-1 M and the space matrix."""
    setup_logging(verbose)
    try:
        cfg = RunConfig(preset=preset, n_t=nt, alpha=alpha, alpha_policy=alpha_policy, grid_kind=grid, threads=threads)
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console) as progress:
            progress.add_task(description="Computing spectra...", total=None)
            files = run_spectrum(cfg, out)
    except PintError as e:
        fail(str(e))
        return

    for label, path in files.items():
        if path is None:
            console.print(f"[yellow]{label}: preconditioner is singular, no file written[/yellow]")
        else:
            console.print(f"[green]✓[/green] {label}: {path}")


@app.command()
def verify(
    scope: Scope = typer.Option(Scope.ALL, "--scope", help="all, core, spectral or convergence"),
    seed: int = typer.Option(0, "--seed", help="Seed of the random instances"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Write the JSON summary to this file"),
    json_output: bool = typer.Option(False, "--json", help="Print the JSON summary instead of a table"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Run the numerical self-checks; exits with status 1 on any failure."""
    setup_logging(verbose)
    summary = run_verify(scope, seed=seed)

    if json_output:
        typer.echo(summary.model_dump_json(indent=2))
    else:
        table = Table(title=f"verify ({scope.value})")
        table.add_column("Check")
        table.add_column("Result")
        table.add_column("Time (s)", justify="right")
        table.add_column("Detail")
        for result in summary.results:
            mark = "[green]PASS[/green]" if result.passed else "[red]FAIL[/red]"
            table.add_row(result.name, mark, f"{result.seconds:.2f}", result.detail)
        console.print(table)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(summary.model_dump_json(indent=2), encoding="utf-8")

    if not summary.passed:
        console.print(f"[red]{summary.n_failed} check(s) failed: {', '.join(summary.failed)}[/red]")
        raise typer.Exit(1)
    if not json_output:
        console.print(f"[green]✓[/green] {summary.n_passed} checks passed")


@app.command()
def bench(
    preset: str = typer.Option(..., "--preset", "-p", help="Preset name or path"),
    nt: int = typer.Option(48, "--nt", help="Number of time steps"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Fixed alpha"),
    threads: List[int] = typer.Option([], "--threads", help="Thread counts to compare; repeatable"),
    grid: GridKind = typer.Option(GridKind.UNIFORM, "--grid"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Compare wall-clock time of sequential CN, P1-GMRES and P_alpha-GMRES."""
    setup_logging(verbose)
    counts = threads or [resolve_threads(None)]
    try:
        cfg = RunConfig(preset=preset, n_t=nt, alpha=alpha, grid_kind=grid)
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console) as progress:
            progress.add_task(description="Benchmarking...", total=None)
            rows = run_bench(cfg, counts)
    except PintError as e:
        fail(str(e))
        return

    table = Table(title=f"{preset} N_t={nt}")
    for column in ("Method", "Threads", "Its", "Time (s)", "Status"):
        table.add_column(column)
    for row in rows:
        table.add_row(
            row.method,
            str(row.threads),
            "-" if row.Its is None else str(row.Its),
            "-" if row.wall_time is None else f"{row.wall_time:.2f}",
            row.status.value,
        )
    console.print(table)


@app.command()
def presets():
    """List available parameter presets."""
    items = list_presets()
    if not items:
        console.print("[yellow]No presets found[/yellow]")
        return

    table = Table(title="Available Presets")
    table.add_column("Name", style="cyan")
    table.add_column("Model")
    table.add_column("T", justify="right")
    table.add_column("K", justify="right")
    table.add_column("Parameters")
    table.add_column("Description")
    for item in items:
        params = ", ".join(f"{k}={v:g}" for k, v in item.params.items())
        table.add_row(item.name, item.model, f"{item.T:g}", f"{item.K:g}", params, item.description)
    console.print(table)


if __name__ == "__main__":
    app()
