"""All-at-once Crank-Nicolson systems.

The space-time operator is ``M = B1 (x) I - (D B2) (x) At`` with
``B1 = tridiag(-1, 1, 0)``, ``B2 = 1/2 tridiag(1, 1, 0)``, ``At = tau A`` and
``D = diag(d(t_{k+1/2}))``. It is never stored assembled: products use the
block recurrence over the M time blocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import AnyArray, Array, BlockVector, SparseMatrix, _check_cap, estimate_norm2
from .errors import DimensionMismatch, ParameterError, SingularMatrix
from .spatial import SpatialProblem

log = logging.getLogger(__name__)

Source = Callable[[float], Array]


@dataclass(frozen=True)
class ToeplitzBlocks:
    """Constant-coefficient CN factors ``Q1 = I - At/2`` and ``Q2 = I + At/2``."""

    q1: SparseMatrix
    q2: SparseMatrix


@dataclass(frozen=True)
class AaoSystem:
    m_steps: int
    n_space: int
    tau: float
    t_final: float
    a_tilde: SparseMatrix
    rhs: BlockVector
    u0: Array
    d_profile: Array | None = None
    space_symbol: Array | None = field(default=None, repr=False)

    @property
    def d(self) -> Array:
        """Per-step coefficient scalars; the constant 1 profile when absent."""
        if self.d_profile is None:
            return np.ones(self.m_steps)
        return self.d_profile

    @property
    def size(self) -> int:
        return self.m_steps * self.n_space

    @property
    def time_varying(self) -> bool:
        return self.d_profile is not None and bool(np.any(self.d_profile != 1.0))

    def toeplitz_blocks(self, scale: float = 1.0) -> ToeplitzBlocks:
        eye = sp.identity(self.n_space, format="csr")
        half = 0.5 * scale * self.a_tilde.csr
        return ToeplitzBlocks(
            SparseMatrix.from_any(eye - half, symmetric=self.a_tilde.flags.symmetric),
            SparseMatrix.from_any(eye + half, symmetric=self.a_tilde.flags.symmetric),
        )

    def step_matrices(self, k: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """``(I - d_k At/2, I + d_k At/2)`` for step ``k`` (0-based)."""
        eye = sp.identity(self.n_space, format="csr")
        half = 0.5 * float(self.d[k]) * self.a_tilde.csr
        return (eye - half).tocsr(), (eye + half).tocsr()


def assemble(
    problem: SpatialProblem,
    t_final: float,
    m_steps: int,
    u0: Array,
    source: Source | None = None,
) -> AaoSystem:
    """Build the AaO system for ``u' = d(t) A u + g(t) + f(t)`` on ``[0, T]``.

    ``source`` and the boundary contribution ``g`` are sampled at the
    half-integer times ``t_{k+1/2}``.
    """
    if m_steps < 1:
        raise ParameterError("the number of time steps must be at least 1")
    if t_final <= 0:
        raise ParameterError("final time must be positive")
    n = problem.n_unknowns
    u0 = np.asarray(u0, dtype=np.float64).reshape(-1)
    if u0.size != n:
        raise DimensionMismatch(f"initial data has {u0.size} entries, the problem has {n} unknowns")

    tau = t_final / m_steps
    a_tilde = problem.matrix.scaled(tau)
    t_half = (np.arange(m_steps) + 0.5) * tau
    d_profile = None
    if problem.time_factor is not None:
        d_profile = np.array([problem.time_factor(t) for t in t_half])
        d_profile.flags.writeable = False

    rhs = np.empty((m_steps, n))
    for k, t in enumerate(t_half):
        f = np.array(problem.boundary_source(t), dtype=np.float64)
        if source is not None:
            f = f + np.asarray(source(t), dtype=np.float64)
        rhs[k] = tau * f
    d0 = 1.0 if d_profile is None else float(d_profile[0])
    rhs[0] += u0 + 0.5 * d0 * (a_tilde.csr @ u0)

    symbol = None if problem.dst_symbol is None else tau * problem.dst_symbol
    log.debug("AaO system assembled: M=%d N=%d tau=%.3e", m_steps, n, tau)
    u0.flags.writeable = False
    return AaoSystem(
        m_steps=m_steps,
        n_space=n,
        tau=tau,
        t_final=float(t_final),
        a_tilde=a_tilde,
        rhs=BlockVector.from_blocks(rhs),
        u0=u0,
        d_profile=d_profile,
        space_symbol=symbol,
    )


def from_a_tilde(
    a_tilde: SparseMatrix | AnyArray | sp.spmatrix,
    m_steps: int,
    t_final: float = 1.0,
    u0: Array | None = None,
    d_profile: Array | None = None,
) -> AaoSystem:
    """System for a given ``At = tau A`` with no source term, as used by the spectral checks."""
    if m_steps < 1:
        raise ParameterError("the number of time steps must be at least 1")
    a_tilde = a_tilde if isinstance(a_tilde, SparseMatrix) else SparseMatrix.from_any(np.atleast_2d(a_tilde))
    n = a_tilde.nrows
    u0 = np.zeros(n) if u0 is None else np.asarray(u0, dtype=np.float64).reshape(-1)
    if u0.size != n:
        raise DimensionMismatch(f"initial data has {u0.size} entries, the matrix has {n} rows")
    profile = None
    if d_profile is not None:
        profile = np.array(d_profile, dtype=np.float64).reshape(-1)
        if profile.size != m_steps:
            raise DimensionMismatch(f"coefficient profile has {profile.size} entries, expected {m_steps}")
        profile.flags.writeable = False
    rhs = np.zeros((m_steps, n))
    d0 = 1.0 if profile is None else float(profile[0])
    rhs[0] = u0 + 0.5 * d0 * (a_tilde.csr @ u0)
    u0.flags.writeable = False
    return AaoSystem(
        m_steps=m_steps,
        n_space=n,
        tau=t_final / m_steps,
        t_final=float(t_final),
        a_tilde=a_tilde,
        rhs=BlockVector.from_blocks(rhs),
        u0=u0,
        d_profile=profile,
    )


def _blocks(system: AaoSystem, u: BlockVector | AnyArray) -> AnyArray:
    data = u.data if isinstance(u, BlockVector) else np.asarray(u)
    if data.shape[0] != system.size:
        raise DimensionMismatch(f"expected {system.size} rows, got {data.shape[0]}")
    return data.reshape(system.m_steps, system.n_space, *data.shape[1:])


def apply_M(system: AaoSystem, u: BlockVector | AnyArray) -> AnyArray:
    """Matrix-free product ``M u``; also accepts an ``(M*N, k)`` block of columns."""
    blocks = _blocks(system, u)
    flat = blocks.reshape(system.m_steps, system.n_space, -1)
    a_u = np.stack([system.a_tilde.csr @ flat[k] for k in range(system.m_steps)])
    half_d = 0.5 * system.d[:, None, None]
    out = flat - half_d * a_u
    out[1:] -= flat[:-1] + half_d[1:] * a_u[:-1]
    return out.reshape(blocks.shape).reshape(system.size, *blocks.shape[2:])


def densify_M(system: AaoSystem, *, cap: int | None = None) -> Array:
    """Dense ``B1 (x) I - (D B2) (x) At`` for the oracles."""
    _check_cap(system.size, cap)
    m = system.m_steps
    b1 = np.eye(m) - np.eye(m, k=-1)
    db2 = system.d[:, None] * 0.5 * (np.eye(m) + np.eye(m, k=-1))
    return np.kron(b1, np.eye(system.n_space)) - np.kron(db2, system.a_tilde.toarray())


def solve_sequential(system: AaoSystem) -> BlockVector:
    """March ``(I - d_k At/2) u^{k+1} = (I + d_k At/2) u^k + tau f^{k+1/2}``."""
    m, n = system.m_steps, system.n_space
    rhs = system.rhs.as_matrix()
    out = np.empty((m, n))
    prev = None
    lu = None
    for k in range(m):
        q1, q2 = system.step_matrices(k)
        if lu is None or system.time_varying:
            try:
                lu = spla.splu(q1.tocsc())
            except RuntimeError as exc:
                raise SingularMatrix(k, f"CN step matrix at step {k} is singular: {exc}") from exc
        # block 0 of the rhs already holds (I + d_0 At/2) u^0
        b = rhs[k] if prev is None else rhs[k] + q2 @ prev
        prev = lu.solve(b)
        out[k] = prev
    return BlockVector.from_blocks(out)


@dataclass(frozen=True)
class ConditionBound:
    norm_a: float
    sigma_max_bound: float
    sigma_min_bound: float
    cond_bound: float
    sigma_max: float | None = None
    sigma_min: float | None = None
    cond: float | None = None

    @property
    def holds(self) -> bool | None:
        """Containment of the true values (None outside verification mode)."""
        if self.sigma_max is None or self.sigma_min is None or self.cond is None:
            return None
        slack = 1e-8
        return (
            self.sigma_max <= self.sigma_max_bound + slack
            and self.sigma_min >= self.sigma_min_bound - slack
            and self.cond <= self.cond_bound + slack
        )


def condition_bound(system: AaoSystem, *, verify: bool = False, cap: int | None = None) -> ConditionBound:
    """``sigma_max <= 2 + tau||A||``, ``sigma_min >= 1/M`` and ``cond <= 2M + T||A||``."""
    norm_a = estimate_norm2(system.a_tilde) / system.tau * float(np.max(system.d))
    bound = ConditionBound(
        norm_a=norm_a,
        sigma_max_bound=2.0 + system.tau * norm_a,
        sigma_min_bound=1.0 / system.m_steps,
        cond_bound=2.0 * system.m_steps + system.t_final * norm_a,
    )
    if not verify:
        return bound
    sv = la.svdvals(densify_M(system, cap=cap))
    smax, smin = float(sv[0]), float(sv[-1])
    return ConditionBound(
        norm_a=norm_a,
        sigma_max_bound=bound.sigma_max_bound,
        sigma_min_bound=bound.sigma_min_bound,
        cond_bound=bound.cond_bound,
        sigma_max=smax,
        sigma_min=smin,
        cond=smax / smin,
    )


def dbar(profile: Array | list[float]) -> float:
    """Arithmetic mean of a coefficient profile."""
    values = np.asarray(profile, dtype=np.float64)
    if values.size == 0:
        raise ParameterError("cannot average an empty profile")
    return float(values.mean())
