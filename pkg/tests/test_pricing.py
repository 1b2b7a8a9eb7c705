import numpy as np
import pytest

from pintsolve import aao, pricing
from pintsolve.config import settings
from pintsolve.errors import DimensionMismatch, OracleCapExceeded, ParameterError
from pintsolve.presets import load_preset
from pintsolve.pricing import PriceQuery, price_at, reference_level_for, reference_price, relative_error
from pintsolve.spatial import Grid1D, Grid2D, build_elliptic_1d


@pytest.fixture
def grid():
    return Grid2D.uniform(10.0, 2.0, 5, 4)


class TestPriceQuery:
    def test_bilinear_reproduces_linear_functions(self, grid):
        s, v = np.meshgrid(grid.s_nodes, grid.v_nodes)
        values = 2.0 * s + 3.0 * v + 1.0
        assert price_at(PriceQuery(3.3, 0.7, grid, values)) == pytest.approx(2 * 3.3 + 3 * 0.7 + 1)

    def test_exact_at_nodes(self, grid, rng):
        values = rng.standard_normal((5, 6))
        assert price_at(PriceQuery(4.0, 1.0, grid, values)) == pytest.approx(values[2, 2])

    def test_shape_checked(self, grid):
        with pytest.raises(DimensionMismatch):
            PriceQuery(1.0, 1.0, grid, np.zeros((6, 5)))

    @pytest.mark.parametrize("s0,v0", [(-1.0, 0.5), (11.0, 0.5), (5.0, 2.5)])
    def test_outside_domain(self, grid, s0, v0):
        with pytest.raises(ParameterError):
            PriceQuery(s0, v0, grid, np.zeros((5, 6)))


class TestRelativeError:
    def test_value(self):
        assert relative_error(10.5, 10.0) == pytest.approx(0.05)

    def test_zero_reference(self):
        with pytest.raises(ParameterError):
            relative_error(1.0, 0.0)


class TestReferenceLevels:
    @pytest.mark.parametrize("n_t,level", [(48, 2), (96, 2), (192, 3), (384, 4)])
    def test_four_times_finer(self, n_t, level):
        assert reference_level_for(n_t) == level
        assert pricing.reference_size(level) >= 4 * n_t

    def test_minimum_override(self):
        assert reference_level_for(48, minimum=3) == 3
        assert reference_level_for(48, minimum=0) == 1


class TestReferencePrice:
    def test_sequential_price_is_bounded(self):
        preset = load_preset("set1")
        price = reference_price(preset, level=0)
        assert 0.0 < price < preset.S0

    def test_cached_per_preset_and_level(self, monkeypatch):
        preset = load_preset("set1")
        first = reference_price(preset, level=0)
        path = settings.cache_dir / "set1_level0.txt"
        assert path.exists()
        assert f"price={first!r}" in path.read_text(encoding="utf-8")

        def boom(system):
            raise AssertionError("reference recomputed despite cache")

        monkeypatch.setattr(pricing, "solve_sequential", boom)
        assert reference_price(preset, level=0) == first

    def test_unreadable_cache_recomputed(self):
        preset = load_preset("set1")
        path = settings.cache_dir / "set1_level0.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("garbage\n", encoding="utf-8")
        assert reference_price(preset, level=0) > 0.0

    def test_without_cache(self):
        preset = load_preset("set1")
        reference_price(preset, level=0, use_cache=False)
        assert not (settings.cache_dir / "set1_level0.txt").exists()

    def test_cap(self):
        with pytest.raises(OracleCapExceeded):
            reference_price(load_preset("set1"), level=0, max_unknowns=100)

    def test_negative_level(self):
        with pytest.raises(ParameterError):
            reference_price(load_preset("set1"), level=-1)


class TestPresetPrice:
    def test_matches_sequential_solution(self):
        preset = load_preset("set2")
        problem, system = preset.assemble(16)
        solution = aao.solve_sequential(system)
        slice_ = pricing.terminal_slice(problem, system, solution)
        assert slice_.shape == (9, 17)
        assert pricing.preset_price(preset, problem, system, solution) == pytest.approx(
            price_at(PriceQuery(preset.S0, preset.V0, problem.grid, slice_))
        )

    def test_one_dimensional_problem_rejected(self, heat):
        preset = load_preset("set1")
        problem = build_elliptic_1d(1.0, 0.0, 0.0, Grid1D.uniform(0.0, 1.0, 16))
        with pytest.raises(ParameterError):
            pricing.preset_price(preset, problem, heat, heat.rhs)
