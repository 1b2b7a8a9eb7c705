import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError

from .aao import AaoSystem, assemble
from .errors import ConfigError, PresetNotFound
from .spatial import (
    Grid2D,
    GridKind,
    SpatialProblem,
    build_heston,
    build_sabr,
    make_stretched_grid_2d,
    payoff_call,
)

PRESET_DIR = Path(__file__).parent / "presets"

_ROMAN = {"i": "set1", "ii": "set2", "iii": "set3", "iv": "set4", "v": "set5"}


class Preset(BaseModel):
    """A named option-pricing parameter set."""

    name: str = Field(..., description="Preset identifier, e.g. set1")
    display_name: str = Field(..., description="Human readable name")
    description: str = Field("", description="One-line summary")
    model: Literal["heston", "sabr"]
    T: float = Field(..., gt=0, description="Maturity")
    K: float = Field(..., gt=0, description="Strike")
    S0: float = Field(..., ge=0, description="Spot at which the price is read")
    V0: float = Field(..., ge=0, description="Variance/volatility at which the price is read")
    s_max: float = Field(..., gt=0)
    v_max: float = Field(..., gt=0)
    params: dict[str, float]
    table_sizes: list[int] = Field(default_factory=list, description="N_t values of the uniform table rows")
    nonuniform_sizes: Optional[list[int]] = None

    @property
    def r(self) -> float:
        return self.params.get("r", 0.0)

    def grid(self, n_t: int, grid_kind: GridKind = GridKind.UNIFORM) -> Grid2D:
        """Grid with the caption convention N_t = N_s = 2 N_v (interval counts)."""
        n_s, n_v = n_t, max(n_t // 2, 2)
        if grid_kind is GridKind.UNIFORM:
            return Grid2D.uniform(self.s_max, self.v_max, n_s, n_v)
        return make_stretched_grid_2d(self.s_max, self.v_max, n_s, n_v, self.K)

    def build(self, n_t: int, grid_kind: GridKind = GridKind.UNIFORM) -> SpatialProblem:
        grid = self.grid(n_t, grid_kind)
        if self.model == "heston":
            return build_heston(self.params, self.K, grid)
        return build_sabr(self.params, self.K, grid)

    def assemble(
        self, n_t: int, grid_kind: GridKind = GridKind.UNIFORM
    ) -> tuple[SpatialProblem, AaoSystem]:
        """Problem and AaO system on the caption grid with the call payoff as initial data."""
        problem = self.build(n_t, grid_kind)
        u0 = problem.restrict(payoff_call(problem.grid, self.K))
        return problem, assemble(problem, self.T, n_t, u0)


def _normalize(name: str) -> str:
    key = name.strip().lower().replace(" ", "").replace("_", "").replace("-", "")
    if key.startswith("set") and key[3:] in _ROMAN:
        return _ROMAN[key[3:]]
    return _ROMAN.get(key, key)


def load_preset(name_or_path: str) -> Preset:
    """Load a preset by name (set1..set5, I..V) or from a JSON file path."""
    path = Path(name_or_path)
    if not (path.suffix == ".json" and path.exists()):
        path = PRESET_DIR / f"{_normalize(name_or_path)}.json"
        if not path.exists():
            raise PresetNotFound(f"Preset '{name_or_path}' not found")
    try:
        return Preset(**json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ConfigError(f"Invalid preset file {path}: {e}") from e


def list_presets() -> list[Preset]:
    return [load_preset(str(p)) for p in sorted(PRESET_DIR.glob("*.json"))]
