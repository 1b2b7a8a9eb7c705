"""Option prices from terminal slices, relative errors and the fine-grid reference oracle."""

from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .aao import AaoSystem, solve_sequential
from .config import settings
from .core import Array, BlockVector
from .errors import DimensionMismatch, OracleCapExceeded, ParameterError
from .presets import Preset
from .spatial import Grid2D, GridKind, SpatialProblem

log = logging.getLogger(__name__)

REFERENCE_BASE = 96
REFERENCE_MAX_UNKNOWNS = 2_000_000


@dataclass(frozen=True)
class PriceQuery:
    """Point query on a full-grid slice of shape ``(len(v_nodes), len(s_nodes))``."""

    s0: float
    v0: float
    grid: Grid2D
    terminal_slice: Array

    def __post_init__(self) -> None:
        expected = (self.grid.v_nodes.size, self.grid.s_nodes.size)
        values = np.asarray(self.terminal_slice, dtype=np.float64)
        if values.shape != expected:
            raise DimensionMismatch(f"slice has shape {values.shape}, grid implies {expected}")
        if not (0.0 <= self.s0 <= self.grid.s_max and 0.0 <= self.v0 <= self.grid.v_max):
            raise ParameterError(
                f"query point ({self.s0}, {self.v0}) lies outside [0, {self.grid.s_max}] x [0, {self.grid.v_max}]"
            )
        object.__setattr__(self, "terminal_slice", values)


def price_at(query: PriceQuery) -> float:
    """Bilinear interpolation on the cell containing ``(s0, v0)``."""
    interp = RegularGridInterpolator(
        (query.grid.v_nodes, query.grid.s_nodes), query.terminal_slice, method="linear"
    )
    return float(interp([[query.v0, query.s0]])[0])


def relative_error(price: float, reference: float) -> float:
    """``|price - reference| / |reference|``."""
    if reference == 0.0:
        raise ParameterError("reference price must be nonzero")
    return abs(price - reference) / abs(reference)


def terminal_slice(problem: SpatialProblem, system: AaoSystem, solution: BlockVector | Array) -> Array:
    """Last time block embedded into the full grid with its boundary values."""
    data = solution.data if isinstance(solution, BlockVector) else np.asarray(solution)
    last = data[(system.m_steps - 1) * system.n_space :]
    return problem.full_field(last, system.t_final)


def preset_price(preset: Preset, problem: SpatialProblem, system: AaoSystem, solution: BlockVector | Array) -> float:
    if not isinstance(problem.grid, Grid2D):
        raise ParameterError("prices are read from two-dimensional problems only")
    query = PriceQuery(preset.S0, preset.V0, problem.grid, terminal_slice(problem, system, solution))
    return price_at(query)


def reference_size(level: int) -> int:
    return REFERENCE_BASE * 2**level


def reference_level_for(n_t: int, minimum: int | None = None) -> int:
    """Smallest level at least ``minimum`` whose mesh is four times finer than ``n_t``."""
    floor = settings.reference_level if minimum is None else minimum
    needed = max(0, math.ceil(math.log2(4.0 * n_t / REFERENCE_BASE)))
    return max(floor, needed)


def _cache_path(cache_dir: Path, preset: Preset, level: int) -> Path:
    return cache_dir / f"{preset.name}_level{level}.txt"


def _read_cache(path: Path) -> float | None:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        return None
    record = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
    try:
        return float(record["price"])
    except (KeyError, ValueError):
        log.warning("ignoring unreadable reference cache %s", path)
        return None


def _write_cache(path: Path, record: dict[str, object]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.stem, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        for key, value in record.items():
            fh.write(f"{key}={value}\n")
    os.replace(tmp, path)


def reference_price(
    preset: Preset,
    level: int | None = None,
    *,
    cache_dir: Path | None = None,
    use_cache: bool = True,
    max_unknowns: int = REFERENCE_MAX_UNKNOWNS,
) -> float:
    """Sequential CN price on a uniform ``96 * 2^level`` mesh, cached per preset and level."""
    level = settings.reference_level if level is None else level
    if level < 0:
        raise ParameterError("refinement level must be non-negative")
    cache_dir = settings.cache_dir if cache_dir is None else Path(cache_dir)
    path = _cache_path(cache_dir, preset, level)
    if use_cache:
        cached = _read_cache(path)
        if cached is not None:
            log.debug("reference price for %s level %d read from %s", preset.name, level, path)
            return cached

    n = reference_size(level)
    grid = preset.grid(n, GridKind.UNIFORM)
    unknowns = grid.n_s * grid.n_v
    if unknowns > max_unknowns:
        raise OracleCapExceeded(unknowns, max_unknowns)
    log.info("computing reference price for %s at level %d (%d unknowns, %d steps)", preset.name, level, unknowns, n)
    problem, system = preset.assemble(n, GridKind.UNIFORM)
    price = preset_price(preset, problem, system, solve_sequential(system))
    if use_cache:
        _write_cache(
            path,
            {
                "preset": preset.name,
                "level": level,
                "n_t": n,
                "n_s": grid.n_s,
                "n_v": grid.n_v,
                "price": repr(price),
            },
        )
    return price
