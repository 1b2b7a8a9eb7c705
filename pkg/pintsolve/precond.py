"""Block alpha-circulant preconditioner.

``P = C1 (x) I - dbar C2 (x) At`` where ``C1``/``C2`` are the alpha-circulant
versions of ``B1``/``B2`` (top-right corner scaled by alpha). With
``Gamma = diag(alpha^{k/M})`` and the unitary DFT ``F`` the time factors
diagonalize as ``C = Gamma^{-1} F* diag(mu) F Gamma``, so ``P^{-1} v`` is

a. scale block k by ``gamma_k``, forward DFT along time;
b. one shifted spatial solve per frequency;
c. inverse DFT, scale block k by ``1/gamma_k``.

Frequency ``j`` of the forward DFT carries the eigenvalue with table index
``(-j) mod M``; step (b) works in table order so that ``lambda1[k]`` and
``lambda2[k]`` are exactly the closed-form values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .aao import AaoSystem, dbar
from .config import resolve_threads, settings
from .core import AnyArray, Array, BlockVector, ComplexArray, DftPlan, _check_cap, dft_apply, parallel_map
from .errors import DimensionMismatch, ImaginaryResidue, ParameterError, SingularPreconditioner

log = logging.getLogger(__name__)

ShiftSolver = Callable[[ComplexArray], ComplexArray]


class AlphaPolicy(str, Enum):
    FIXED = "fixed"
    DELTA_SQRT_TAU_OVER_T = "delta_sqrt_tau_over_T"


def alpha_from_policy(
    policy: AlphaPolicy | str,
    tau: float,
    t_final: float,
    *,
    alpha: float | None = None,
    delta: float | None = None,
) -> float:
    """Resolve alpha: a fixed value, or ``delta * sqrt(tau / T)``."""
    policy = AlphaPolicy(policy)
    if policy is AlphaPolicy.FIXED:
        value = settings.default_alpha if alpha is None else alpha
    else:
        if tau <= 0 or t_final <= 0:
            raise ParameterError("tau and T must be positive to resolve the alpha policy")
        value = (settings.alpha_delta if delta is None else delta) * math.sqrt(tau / t_final)
    if not 0.0 < value <= 1.0:
        raise ParameterError(f"alpha must lie in (0, 1], got {value}")
    return float(value)


def eigenvalue_tables(alpha: float, m_steps: int) -> tuple[ComplexArray, ComplexArray, Array]:
    """``(lambda1, lambda2, gamma)`` for 0-based table index ``k``.

    ``lambda1[k] = 1 - alpha^{1/M} e^{2 pi i k / M}``,
    ``lambda2[k] = 1/2 + 1/2 alpha^{1/M} e^{2 pi i k / M}`` and
    ``gamma[k] = alpha^{k/M}``. Entries ``k`` and ``M - k`` are built from one
    exponential so they are exact conjugates.
    """
    if m_steps < 1:
        raise ParameterError("the number of time steps must be at least 1")
    half = m_steps // 2 + 1
    table = np.empty(m_steps, dtype=np.complex128)
    angles = 2.0 * np.pi * np.arange(half) / m_steps
    table[:half] = np.cos(angles) + 1j * np.sin(angles)
    table[0] = 1.0
    if m_steps % 2 == 0:
        table[m_steps // 2] = -1.0
    for k in range(1, m_steps - half + 1):
        table[m_steps - k] = np.conj(table[k])
    root = alpha ** (1.0 / m_steps)
    lambda1 = 1.0 - root * table
    lambda2 = 0.5 + 0.5 * root * table
    gamma = alpha ** (np.arange(m_steps) / m_steps)
    for arr in (lambda1, lambda2, gamma):
        arr.flags.writeable = False
    return lambda1, lambda2, gamma


def _lu_solver(mat: sp.csc_matrix, k: int, lam1: complex, lam2: complex) -> ShiftSolver:
    try:
        lu = spla.splu(mat, permc_spec="COLAMD")
    except RuntimeError as exc:
        log.debug("shift %d: %s", k, exc)
        raise SingularPreconditioner(k + 1, lam1, lam2) from exc
    diag_u = np.abs(lu.U.diagonal())
    if diag_u.size and diag_u.min() <= mat.shape[0] * np.finfo(float).eps * max(diag_u.max(), 1.0):
        raise SingularPreconditioner(k + 1, lam1, lam2)
    return lu.solve


def _dst_solver(symbol: Array, k: int, lam1: complex, lam2: complex, dbar_: float) -> ShiftSolver:
    denom = lam1 - dbar_ * lam2 * symbol
    if np.min(np.abs(denom)) <= symbol.size * np.finfo(float).eps * max(np.max(np.abs(denom)), 1.0):
        raise SingularPreconditioner(k + 1, lam1, lam2)
    scale = denom.reshape(-1, 1)

    def transform(x: ComplexArray) -> ComplexArray:
        re = scipy.fft.dst(x.real, type=1, norm="ortho", axis=0)
        im = scipy.fft.dst(x.imag, type=1, norm="ortho", axis=0)
        return re + 1j * im

    def solve(rhs: ComplexArray) -> ComplexArray:
        y = transform(rhs.reshape(rhs.shape[0], -1)) / scale
        return transform(y).reshape(rhs.shape)

    return solve


@dataclass(frozen=True)
class AlphaPreconditioner:
    alpha: float
    m_steps: int
    n_space: int
    lambda1: ComplexArray
    lambda2: ComplexArray
    gamma: Array
    dbar: float
    a_tilde: sp.csr_matrix = field(repr=False)
    solvers: tuple[ShiftSolver, ...] = field(repr=False)
    conjugate_pairs: bool = True
    uses_dst: bool = False
    threads: int = 1

    @classmethod
    def build(
        cls,
        alpha: float,
        system: AaoSystem,
        *,
        conjugate_pairs: bool = True,
        threads: int | None = None,
    ) -> AlphaPreconditioner:
        """Factor the shifted blocks ``lambda1[k] I - dbar lambda2[k] At``.

        Only ``k < M//2 + 1`` are factored when ``conjugate_pairs`` is set;
        the rest follow by conjugation in :meth:`apply_inverse`.
        """
        if not 0.0 < alpha <= 1.0:
            raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
        m = system.m_steps
        lambda1, lambda2, gamma = eigenvalue_tables(alpha, m)
        d_bar = dbar(system.d)
        count = m // 2 + 1 if conjugate_pairs else m
        count = min(count, m)
        workers = resolve_threads(threads)
        a_tilde = system.a_tilde.csr
        eye = sp.identity(system.n_space, format="csc", dtype=np.complex128)
        symbol = system.space_symbol

        def factor(k: int) -> ShiftSolver:
            lam1, lam2 = complex(lambda1[k]), complex(lambda2[k])
            if symbol is not None:
                return _dst_solver(symbol, k, lam1, lam2, d_bar)
            shifted = (lam1 * eye - (d_bar * lam2) * a_tilde).tocsc()
            return _lu_solver(shifted, k, lam1, lam2)

        solvers = tuple(parallel_map(factor, range(count), workers))
        log.debug(
            "preconditioner built: alpha=%.1e M=%d N=%d blocks=%d dst=%s",
            alpha, m, system.n_space, count, symbol is not None,
        )
        return cls(
            alpha=float(alpha),
            m_steps=m,
            n_space=system.n_space,
            lambda1=lambda1,
            lambda2=lambda2,
            gamma=gamma,
            dbar=d_bar,
            a_tilde=a_tilde,
            solvers=solvers,
            conjugate_pairs=conjugate_pairs,
            uses_dst=symbol is not None,
            threads=workers,
        )

    @property
    def factorizations(self) -> int:
        return len(self.solvers)

    @property
    def size(self) -> int:
        return self.m_steps * self.n_space

    def _blocks(self, v: BlockVector | AnyArray) -> AnyArray:
        data = v.data if isinstance(v, BlockVector) else np.asarray(v)
        if data.shape[0] != self.size:
            raise DimensionMismatch(f"expected {self.size} rows, got {data.shape[0]}")
        return data.reshape(self.m_steps, self.n_space, -1)

    def apply_inverse(self, v: BlockVector | AnyArray, *, imag_tol: float | None = None) -> Array:
        """``P^{-1} v`` for real ``v`` of shape ``(M*N,)`` or ``(M*N, ncols)``."""
        shape = v.data.shape if isinstance(v, BlockVector) else np.shape(v)
        blocks = self._blocks(v)
        if np.iscomplexobj(blocks):
            raise ParameterError("apply_inverse takes real input only")
        m = self.m_steps
        plan = DftPlan(m)
        perm = (-np.arange(m)) % m

        # (a)
        y = dft_apply(plan, self.gamma[:, None, None] * blocks, axis=0)[perm]

        # (b)
        solved = parallel_map(lambda k: self.solvers[k](y[k]), range(len(self.solvers)), self.threads)
        z = np.empty_like(y)
        for k, block in enumerate(solved):
            z[k] = block
        if len(self.solvers) < m:
            for k in range(1, m - len(self.solvers) + 1):
                z[m - k] = np.conj(z[k])

        # (c)
        out = dft_apply(plan.inverse(), z[perm], axis=0) / self.gamma[:, None, None]
        tol = settings.imag_tol if imag_tol is None else imag_tol
        norm_re = float(np.linalg.norm(out.real))
        norm_im = float(np.linalg.norm(out.imag))
        ratio = norm_im / norm_re if norm_re > 0 else (0.0 if norm_im == 0 else math.inf)
        if ratio > tol:
            raise ImaginaryResidue(ratio, tol)
        return np.ascontiguousarray(out.real).reshape(shape)

    def apply(self, v: BlockVector | AnyArray) -> AnyArray:
        """Matrix-free ``P v``: ``Q1 v_k - Q2 v_{k-1}``, wrapped with ``-alpha Q2 v_{M-1}``."""
        shape = v.data.shape if isinstance(v, BlockVector) else np.shape(v)
        blocks = self._blocks(v)
        a_v = np.stack([self.a_tilde @ blocks[k] for k in range(self.m_steps)])
        half = 0.5 * self.dbar
        q1 = blocks - half * a_v
        q2 = blocks + half * a_v
        out = q1.copy()
        out[1:] -= q2[:-1]
        out[0] -= self.alpha * q2[-1]
        return out.reshape(shape)

    def residual_check_roundtrip(self, v: BlockVector | AnyArray) -> float:
        """``||P P^{-1} v - v|| / ||v||`` (0 for ``v = 0``)."""
        data = v.data if isinstance(v, BlockVector) else np.asarray(v, dtype=np.float64)
        norm_v = float(np.linalg.norm(data))
        if norm_v == 0.0:
            return 0.0
        back = self.apply(self.apply_inverse(data, imag_tol=math.inf))
        return float(np.linalg.norm(back - data) / norm_v)

    def dense_matrix(self, *, cap: int | None = None) -> Array:
        """Kronecker form of ``P`` for the dense oracles."""
        _check_cap(self.size, cap)
        m = self.m_steps
        c1 = np.eye(m) - np.eye(m, k=-1)
        c2 = 0.5 * (np.eye(m) + np.eye(m, k=-1))
        c1[0, m - 1] -= self.alpha
        c2[0, m - 1] += 0.5 * self.alpha
        return np.kron(c1, np.eye(self.n_space)) - self.dbar * np.kron(c2, self.a_tilde.toarray())


def build(
    alpha: float,
    system: AaoSystem,
    *,
    conjugate_pairs: bool = True,
    threads: int | None = None,
) -> AlphaPreconditioner:
    return AlphaPreconditioner.build(alpha, system, conjugate_pairs=conjugate_pairs, threads=threads)


def apply_inverse(precond: AlphaPreconditioner, v: BlockVector | AnyArray) -> Array:
    return precond.apply_inverse(v)


def residual_check_roundtrip(precond: AlphaPreconditioner, v: BlockVector | AnyArray) -> float:
    return precond.residual_check_roundtrip(v)


def conjugate_pairing_error(lambdas: Sequence[complex] | ComplexArray) -> float:
    """Largest ``|lambda[M-k] - conj(lambda[k])|`` over ``k = 1..M-1``."""
    values = np.asarray(lambdas, dtype=np.complex128)
    m = values.size
    if m < 2:
        return 0.0
    k = np.arange(1, m)
    return float(np.max(np.abs(values[m - k] - np.conj(values[k]))))
