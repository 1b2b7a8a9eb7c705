"""Spatial grids and discretization matrices for the supported operators.

Every builder returns a :class:`SpatialProblem` holding the matrix ``A`` over
the unknown nodes plus the boundary contribution ``g(t)`` that the AaO
assembly folds into the source term.

Unknown layout for the 2D option-pricing models (``n_s``/``n_v`` are interval
counts): s-nodes ``1..n_s`` (``s = 0`` is a Dirichlet node, ``s = S_max`` keeps
its Neumann row) times v-nodes ``0..n_v-1`` (``v = V_max`` is a Dirichlet
node), ordered v-major, so unknown ``(i, j)`` has index ``j*n_s + (i-1)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.special import gamma as gamma_fn

from .core import Array, Definiteness, SparseMatrix
from .errors import DimensionMismatch, GridError, ParameterError

log = logging.getLogger(__name__)

Coefficient = Union[float, Callable[[Array], Array]]
BoundaryValue = Union[float, Callable[[float], float]]


class OperatorKind(str, Enum):
    ELLIPTIC1D = "elliptic1d"
    RIESZ1D = "riesz1d"
    BIHARMONIC1D = "biharmonic1d"
    HESTON = "heston"
    SABR = "sabr"


class GridKind(str, Enum):
    UNIFORM = "uniform"
    STRETCHED = "stretched"
    NONUNIFORM = "nonuniform"


def _check_nodes(nodes: Array, name: str) -> Array:
    nodes = np.array(nodes, dtype=np.float64).reshape(-1)
    if nodes.size < 3:
        raise GridError(f"{name} needs at least 3 nodes, got {nodes.size}")
    if not np.all(np.diff(nodes) > 0):
        raise GridError(f"{name} must be strictly increasing")
    nodes.flags.writeable = False
    return nodes


@dataclass(frozen=True)
class Grid1D:
    """Nodes of a 1D grid including both boundary nodes."""

    nodes: Array
    kind: GridKind = GridKind.UNIFORM

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", _check_nodes(self.nodes, "grid"))

    @classmethod
    def uniform(cls, lo: float, hi: float, n_intervals: int) -> Grid1D:
        return cls(np.linspace(lo, hi, n_intervals + 1), GridKind.UNIFORM)

    @property
    def interior(self) -> Array:
        return self.nodes[1:-1]

    @property
    def n_interior(self) -> int:
        return int(self.nodes.size - 2)

    @property
    def h(self) -> float:
        """Mesh width of a uniform grid."""
        return float((self.nodes[-1] - self.nodes[0]) / (self.nodes.size - 1))


@dataclass(frozen=True)
class Grid2D:
    """Tensor grid on ``[0, S_max] x [0, V_max]``."""

    s_nodes: Array
    v_nodes: Array
    kind: GridKind = GridKind.UNIFORM

    def __post_init__(self) -> None:
        s = _check_nodes(self.s_nodes, "s grid")
        v = _check_nodes(self.v_nodes, "v grid")
        if s[0] != 0.0 or v[0] != 0.0:
            raise GridError("s and v grids must start at 0")
        object.__setattr__(self, "s_nodes", s)
        object.__setattr__(self, "v_nodes", v)

    @classmethod
    def uniform(cls, s_max: float, v_max: float, n_s: int, n_v: int) -> Grid2D:
        return cls(np.linspace(0.0, s_max, n_s + 1), np.linspace(0.0, v_max, n_v + 1), GridKind.UNIFORM)

    @property
    def s_max(self) -> float:
        return float(self.s_nodes[-1])

    @property
    def v_max(self) -> float:
        return float(self.v_nodes[-1])

    @property
    def n_s(self) -> int:
        return int(self.s_nodes.size - 1)

    @property
    def n_v(self) -> int:
        return int(self.v_nodes.size - 1)


def _zero_source(n: int) -> Callable[[float], Array]:
    zeros = np.zeros(n)
    zeros.flags.writeable = False
    return lambda t: zeros


@dataclass(frozen=True)
class SpatialProblem:
    operator_kind: OperatorKind
    parameters: Mapping[str, float]
    grid: Grid1D | Grid2D
    matrix: SparseMatrix
    boundary_source: Callable[[float], Array]
    boundary_values: Callable[[float], Array]
    time_factor: Callable[[float], float] | None = None
    dst_symbol: Array | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.matrix.nrows != self.matrix.ncols:
            raise DimensionMismatch("spatial matrix must be square")
        if self.matrix.nrows != self.n_unknowns:
            raise DimensionMismatch(
                f"matrix has {self.matrix.nrows} rows but the grid implies {self.n_unknowns} unknowns"
            )

    @property
    def n_unknowns(self) -> int:
        if isinstance(self.grid, Grid1D):
            return self.grid.n_interior
        return self.grid.n_s * self.grid.n_v

    def restrict(self, values: Array) -> Array:
        """Pick the unknown nodes out of a full-grid array."""
        values = np.asarray(values)
        if isinstance(self.grid, Grid1D):
            return np.array(values[1:-1], dtype=np.float64)
        return np.array(values[:-1, 1:], dtype=np.float64).reshape(-1)

    def full_field(self, u: Array, t: float = 0.0) -> Array:
        """Embed an unknown vector into the full grid with its Dirichlet values."""
        u = np.asarray(u)
        if u.size != self.n_unknowns:
            raise DimensionMismatch(f"expected {self.n_unknowns} unknowns, got {u.size}")
        out = np.array(self.boundary_values(t), dtype=np.float64)
        if isinstance(self.grid, Grid1D):
            out[1:-1] = u
        else:
            out[:-1, 1:] = u.reshape(self.grid.n_v, self.grid.n_s)
        return out


def _sample(coef: Coefficient, x: Array) -> Array:
    if callable(coef):
        return np.broadcast_to(np.asarray(coef(x), dtype=np.float64), x.shape).copy()
    return np.full(x.shape, float(coef))


def _boundary(value: BoundaryValue, t: float) -> float:
    return float(value(t)) if callable(value) else float(value)


def build_elliptic_1d(
    a: Coefficient,
    b: Coefficient,
    c0: Coefficient,
    grid: Grid1D,
    dirichlet: tuple[BoundaryValue, BoundaryValue] = (0.0, 0.0),
) -> SpatialProblem:
    """Central differences for ``(a u')' - b u' - c0 u`` with Dirichlet ends."""
    x = grid.nodes
    n = grid.n_interior
    xi = x[1:-1]
    if grid.kind is GridKind.UNIFORM:
        h = grid.h
        hm = np.full(n, h)
        hp = np.full(n, h)
        hbar = np.full(n, h)
    else:
        hm = xi - x[:-2]
        hp = x[2:] - xi
        hbar = 0.5 * (hm + hp)
    mid = 0.5 * (x[:-1] + x[1:])
    a_mid = _sample(a, mid)
    if np.any(_sample(a, x) <= 0) or np.any(a_mid <= 0):
        raise ParameterError("diffusion coefficient a(x) must be positive on the grid")
    b_i = _sample(b, xi)
    c_i = _sample(c0, xi)

    lower = a_mid[:-1] / (hm * hbar)
    upper = a_mid[1:] / (hp * hbar)
    diag = -(lower + upper) - c_i
    # -b u' with three-point first-derivative weights
    lower = lower + b_i * hp / (hm * (hm + hp))
    diag = diag - b_i * (hp - hm) / (hm * hp)
    upper = upper - b_i * hm / (hp * (hm + hp))

    mat = sp.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], shape=(n, n), format="csr")
    b_zero = bool(np.all(b_i == 0.0))
    symmetric = b_zero and grid.kind is GridKind.UNIFORM
    nsd = symmetric and bool(np.all(c_i >= 0.0))
    matrix = SparseMatrix.from_any(
        mat,
        symmetric=symmetric,
        definiteness=Definiteness.NEGATIVE_SEMIDEFINITE if nsd else Definiteness.UNKNOWN,
    )

    w_left, w_right = float(lower[0]), float(upper[-1])
    left, right = dirichlet

    def source(t: float) -> Array:
        g = np.zeros(n)
        g[0] += w_left * _boundary(left, t)
        g[-1] += w_right * _boundary(right, t)
        return g

    def values(t: float) -> Array:
        full = np.zeros(x.size)
        full[0] = _boundary(left, t)
        full[-1] = _boundary(right, t)
        return full

    symbol = None
    a_nodes = _sample(a, x)
    if symmetric and np.ptp(a_nodes) == 0.0 and np.ptp(c_i) == 0.0:
        m = np.arange(1, n + 1)
        symbol = 2.0 * a_nodes[0] / grid.h**2 * (np.cos(m * np.pi / (n + 1)) - 1.0) - c_i[0]

    params = {"a_min": float(a_mid.min()), "b_max": float(np.abs(b_i).max()), "c0_min": float(c_i.min())}
    return SpatialProblem(OperatorKind.ELLIPTIC1D, params, grid, matrix, source, values, dst_symbol=symbol)


def fractional_weights(order: float, count: int) -> Array:
    """Fractional centred-difference weights ``g_0 .. g_{count-1}`` for a Riesz derivative."""
    g = np.empty(count)
    g[0] = gamma_fn(order + 1.0) / gamma_fn(order / 2.0 + 1.0) ** 2
    for k in range(count - 1):
        g[k + 1] = (1.0 - (order + 1.0) / (order / 2.0 + k + 1.0)) * g[k]
    return g


def build_riesz_1d(
    orders: Sequence[float], coefficients: Sequence[float], grid: Grid1D
) -> SpatialProblem:
    """Symmetric Toeplitz discretization of ``sum_j kappa_j d^{beta_j}/d|x|^{beta_j}``."""
    if len(orders) != len(coefficients) or not orders:
        raise ParameterError("orders and coefficients must be non-empty and of equal length")
    if grid.kind is not GridKind.UNIFORM:
        raise GridError("the fractional centred-difference scheme needs a uniform grid")
    n = grid.n_interior
    h = grid.h
    dense = np.zeros((n, n))
    for beta, kappa in zip(orders, coefficients):
        if not 1.0 < beta < 2.0:
            raise ParameterError(f"fractional order must lie in (1, 2), got {beta}")
        if kappa <= 0:
            raise ParameterError(f"fractional diffusivity must be positive, got {kappa}")
        dense -= kappa * h ** (-beta) * la.toeplitz(fractional_weights(beta, n))
    matrix = SparseMatrix.from_any(dense, symmetric=True, definiteness=Definiteness.NEGATIVE_SEMIDEFINITE)
    params = {f"beta_{j}": float(b) for j, b in enumerate(orders)}
    params.update({f"kappa_{j}": float(k) for j, k in enumerate(coefficients)})
    zeros = np.zeros(grid.nodes.size)
    return SpatialProblem(
        OperatorKind.RIESZ1D, params, grid, matrix, _zero_source(n), lambda t: zeros
    )


def build_biharmonic_1d(kappa: float, grid: Grid1D) -> SpatialProblem:
    """``-kappa u'''' + u''`` with hinged ends (u = u'' = 0), as ``-kappa D2^2 + D2``."""
    if kappa <= 0:
        raise ParameterError("kappa must be positive")
    if grid.kind is not GridKind.UNIFORM:
        raise GridError("the biharmonic operator is assembled on uniform grids only")
    n = grid.n_interior
    h = grid.h
    d2 = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="csr") / h**2
    mat = (-kappa * (d2 @ d2) + d2).tocsr()
    mat = (0.5 * (mat + mat.T)).tocsr()
    matrix = SparseMatrix.from_any(mat, symmetric=True, definiteness=Definiteness.NEGATIVE_SEMIDEFINITE)
    lam = 2.0 / h**2 * (np.cos(np.arange(1, n + 1) * np.pi / (n + 1)) - 1.0)
    zeros = np.zeros(grid.nodes.size)
    return SpatialProblem(
        OperatorKind.BIHARMONIC1D,
        {"kappa": float(kappa)},
        grid,
        matrix,
        _zero_source(n),
        lambda t: zeros,
        dst_symbol=-kappa * lam**2 + lam,
    )


@dataclass(frozen=True)
class _AxisWeights:
    """Three-point weights per node (NaN at the two ends)."""

    first: tuple[Array, Array, Array]
    second: tuple[Array, Array, Array]
    forward: tuple[float, float, float]
    h_last: float


def _axis_weights(x: Array) -> _AxisWeights:
    hm = np.full(x.size, np.nan)
    hp = np.full(x.size, np.nan)
    hm[1:-1] = x[1:-1] - x[:-2]
    hp[1:-1] = x[2:] - x[1:-1]
    first = (-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp)))
    second = (2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp)))
    h1, h2 = x[1] - x[0], x[2] - x[1]
    forward = (
        -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
        (h1 + h2) / (h1 * h2),
        -h1 / (h2 * (h1 + h2)),
    )
    return _AxisWeights(first, second, forward, float(x[-1] - x[-2]))


def _assemble_2d(
    grid: Grid2D,
    a_ss: Array,
    a_sv: Array,
    a_vv: Array,
    b_s: Array,
    b_v: Array,
    c: Array,
    dirichlet: Array,
    neumann_slope: float = 1.0,
) -> tuple[sp.csr_matrix, Array]:
    """Assemble ``a_ss u_ss + a_sv u_sv + a_vv u_vv + b_s u_s + b_v u_v + c u``.

    Coefficient arrays are indexed ``[j, i]`` over the full grid. Rows at
    ``v = 0`` use the second-order forward stencil for ``u_v`` and drop the
    second-order v terms (their coefficients vanish there). Rows at
    ``s = S_max`` take ``u_s = neumann_slope`` and the quadratic fitted
    through ``u_{N-1}``, ``u_N`` and that slope for ``u_ss``.
    """
    ns_all, nv_all = grid.s_nodes.size, grid.v_nodes.size
    if nv_all < 3:
        raise GridError("the one-sided v = 0 stencil needs at least 3 v-nodes")
    n_s, n_v = ns_all - 1, nv_all - 1
    ws = _axis_weights(grid.s_nodes)
    wv = _axis_weights(grid.v_nodes)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    g0 = np.zeros(n_s * n_v)

    def add(row: int, ii: int, jj: int, w: float) -> None:
        if w == 0.0:
            return
        if ii == 0 or jj == nv_all - 1:
            g0[row] += w * dirichlet[jj, ii]
        else:
            rows.append(row)
            cols.append(jj * n_s + ii - 1)
            vals.append(w)

    last = ns_all - 1
    for j in range(n_v):
        for i in range(1, ns_all):
            row = j * n_s + i - 1
            add(row, i, j, c[j, i])
            if i < last:
                for off in (-1, 0, 1):
                    add(row, i + off, j, a_ss[j, i] * ws.second[off + 1][i] + b_s[j, i] * ws.first[off + 1][i])
            else:
                h = ws.h_last
                add(row, i - 1, j, 2.0 * a_ss[j, i] / h**2)
                add(row, i, j, -2.0 * a_ss[j, i] / h**2)
                g0[row] += 2.0 * a_ss[j, i] * neumann_slope / h + b_s[j, i] * neumann_slope
            if j == 0:
                for off in (0, 1, 2):
                    add(row, i, off, b_v[j, i] * wv.forward[off])
                continue
            for off in (-1, 0, 1):
                add(row, i, j + off, a_vv[j, i] * wv.second[off + 1][j] + b_v[j, i] * wv.first[off + 1][j])
            if i < last and a_sv[j, i] != 0.0:
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        add(row, i + di, j + dj, a_sv[j, i] * ws.first[di + 1][i] * wv.first[dj + 1][j])

    n = n_s * n_v
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return mat, g0


def _call_dirichlet(grid: Grid2D) -> Array:
    """``u(0, v) = 0`` and ``u(s, V_max) = s`` on the full grid."""
    values = np.zeros((grid.v_nodes.size, grid.s_nodes.size))
    values[-1, :] = grid.s_nodes
    values[:, 0] = 0.0
    return values


def _require(params: Mapping[str, float], names: Sequence[str]) -> None:
    missing = [name for name in names if name not in params]
    if missing:
        raise ParameterError(f"missing model parameters: {', '.join(missing)}")


def _model_problem(
    kind: OperatorKind,
    params: Mapping[str, float],
    grid: Grid2D,
    coefficients: tuple[Array, Array, Array, Array, Array, Array],
    time_factor: Callable[[float], float] | None,
) -> SpatialProblem:
    dirichlet = _call_dirichlet(grid)
    mat, g0 = _assemble_2d(grid, *coefficients, dirichlet)
    g0.flags.writeable = False
    matrix = SparseMatrix.from_any(mat, symmetric=False)
    log.debug("%s matrix assembled: n=%d nnz=%d", kind.value, matrix.nrows, matrix.nnz)

    if time_factor is None:
        source: Callable[[float], Array] = lambda t: g0
    else:
        factor = time_factor
        source = lambda t: factor(t) * g0
    dirichlet.flags.writeable = False
    return SpatialProblem(kind, dict(params), grid, matrix, source, lambda t: dirichlet, time_factor)


def build_heston(params: Mapping[str, float], strike: float, grid: Grid2D) -> SpatialProblem:
    """Heston operator with the call boundary conditions and the v = 0 row kept as unknowns."""
    _require(params, ("kappa", "eta", "sigma", "r", "rho"))
    kappa, eta, sigma, r, rho = (float(params[k]) for k in ("kappa", "eta", "sigma", "r", "rho"))
    if abs(rho) > 1.0:
        raise ParameterError(f"correlation must satisfy |rho| <= 1, got {rho}")
    if sigma <= 0 or kappa <= 0:
        raise ParameterError("sigma and kappa must be positive")
    if strike <= 0:
        raise ParameterError("strike must be positive")
    s, v = np.meshgrid(grid.s_nodes, grid.v_nodes)
    coefficients = (
        0.5 * v * s**2,
        rho * sigma * s * v,
        0.5 * sigma**2 * v,
        r * s,
        kappa * (eta - v),
        np.full(s.shape, -r),
    )
    merged = {**params, "K": float(strike)}
    return _model_problem(OperatorKind.HESTON, merged, grid, coefficients, None)


def build_sabr(params: Mapping[str, float], strike: float, grid: Grid2D) -> SpatialProblem:
    """SABR operator assembled at ``D = 1`` with the scalar time profile ``d(t) = exp(-r t)``.

    The time profile is ``None`` when ``r = 0`` (time-independent problem).
    """
    _require(params, ("beta", "sigma", "r", "rho"))
    beta, sigma, r, rho = (float(params[k]) for k in ("beta", "sigma", "r", "rho"))
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"SABR beta must lie in (0, 1], got {beta}")
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    if abs(rho) > 1.0:
        raise ParameterError(f"correlation must satisfy |rho| <= 1, got {rho}")
    if strike <= 0:
        raise ParameterError("strike must be positive")
    s, v = np.meshgrid(grid.s_nodes, grid.v_nodes)
    coefficients = (
        0.5 * v**2 * s ** (2.0 * beta),
        rho * sigma * s**beta * v**2,
        0.5 * sigma**2 * v**2,
        r * s,
        np.zeros(s.shape),
        np.full(s.shape, -r),
    )
    time_factor = None if r == 0.0 else sabr_time_factor(r)
    merged = {**params, "K": float(strike)}
    return _model_problem(OperatorKind.SABR, merged, grid, coefficients, time_factor)


def sabr_time_factor(r: float) -> Callable[[float], float]:
    return lambda t: math.exp(-r * t)


def stretched_nodes(lo: float, hi: float, center: float, n_intervals: int, strength: float = 5.0) -> Array:
    """Nodes on ``[lo, hi]`` clustered around ``center`` by a sinh map."""
    if n_intervals + 1 < 4:
        raise GridError("a stretched grid needs at least 4 nodes per axis")
    if not lo <= center <= hi:
        raise GridError(f"concentration point {center} lies outside [{lo}, {hi}]")
    if strength < 0:
        raise ParameterError("stretch strength must be non-negative")
    if strength == 0.0:
        return np.linspace(lo, hi, n_intervals + 1)
    width = hi - lo
    xi_lo = math.asinh(strength * (lo - center) / width)
    xi_hi = math.asinh(strength * (hi - center) / width)
    nodes = center + width / strength * np.sinh(np.linspace(xi_lo, xi_hi, n_intervals + 1))
    nodes[0], nodes[-1] = lo, hi
    return nodes


def make_stretched_grid(
    lo: float, hi: float, center: float, n_intervals: int, strength: float = 5.0
) -> Grid1D:
    kind = GridKind.UNIFORM if strength == 0.0 else GridKind.STRETCHED
    return Grid1D(stretched_nodes(lo, hi, center, n_intervals, strength), kind)


def make_stretched_grid_2d(
    s_max: float,
    v_max: float,
    n_s: int,
    n_v: int,
    strike: float,
    strength_s: float = 5.0,
    strength_v: float = 5.0,
) -> Grid2D:
    """Grid clustered near ``s = strike`` and ``v = 0``."""
    s_nodes = stretched_nodes(0.0, s_max, strike, n_s, strength_s)
    v_nodes = stretched_nodes(0.0, v_max, 0.0, n_v, strength_v)
    return Grid2D(s_nodes, v_nodes, GridKind.NONUNIFORM)


def payoff_call(grid: Grid1D | Grid2D, strike: float) -> Array:
    """``max(0, s - K)`` at every node of the grid (independent of v)."""
    if strike <= 0:
        raise ParameterError("strike must be positive")
    if isinstance(grid, Grid1D):
        return np.maximum(grid.nodes - strike, 0.0)
    row = np.maximum(grid.s_nodes - strike, 0.0)
    return np.tile(row, (grid.v_nodes.size, 1))
