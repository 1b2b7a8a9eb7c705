"""Spectral checks of the all-at-once system and its preconditioned form.

``P = M - alpha R`` where ``R`` has the single top-right block ``Q2``. Hence
``P^{-1} M = I + alpha P^{-1} (e_1 (x) I)(e_M^T (x) Q2)`` has ``(M-1)N``
eigenvalues equal to one plus the ``N`` eigenvalues of the reduced matrix
``I + alpha (e_M^T (x) Q2) P^{-1} (e_1 (x) I)``. The structured path uses this
when ``M*N`` is past the dense cap but ``N`` is not.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as la

from .aao import AaoSystem, densify_M
from .config import settings
from .core import Array, ComplexArray, Definiteness, _check_cap, dense_eig, dense_solve
from .errors import OracleCapExceeded, TheoremPreconditionViolated
from .precond import AlphaPreconditioner

log = logging.getLogger(__name__)

UNIT_TOL = 1e-8
ANNULUS_SLACK = 1e-10


class EigenClass(str, Enum):
    UNIT = "unit"
    ANNULUS = "annulus"
    VIOLATION = "violation"
    PLAIN = "plain"


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: ComplexArray
    n_unit: int
    n_annulus: int
    violations: list[tuple[complex, str]]
    alpha: float
    tol_unit: float
    labels: tuple[EigenClass, ...] = field(repr=False, default=())
    method: str = "dense"

    @property
    def non_unit(self) -> ComplexArray:
        mask = np.array([label is not EigenClass.UNIT for label in self.labels], dtype=bool)
        return self.eigenvalues[mask]


def annulus_bounds(alpha: float) -> tuple[float, float]:
    """``(1/(1+alpha), 1/(1-alpha))``; the outer radius is infinite at alpha = 1."""
    upper = math.inf if alpha >= 1.0 else 1.0 / (1.0 - alpha)
    return 1.0 / (1.0 + alpha), upper


def _classify(
    eigenvalues: ComplexArray, alpha: float, tol_unit: float, slack: float, *, unit_allowed: bool = True
) -> tuple[list[EigenClass], list[tuple[complex, str]]]:
    lo, hi = annulus_bounds(alpha)
    labels: list[EigenClass] = []
    violations: list[tuple[complex, str]] = []
    for lam in eigenvalues:
        lam = complex(lam)
        if unit_allowed and abs(lam - 1.0) <= tol_unit:
            labels.append(EigenClass.UNIT)
            continue
        modulus = abs(lam)
        if lam.real <= 0.0:
            reason = "nonpositive real part"
        elif modulus < lo - slack:
            reason = f"modulus {modulus:.12g} below {lo:.12g}"
        elif modulus > hi + slack:
            reason = f"modulus {modulus:.12g} above {hi:.12g}"
        else:
            labels.append(EigenClass.ANNULUS)
            continue
        labels.append(EigenClass.VIOLATION)
        violations.append((lam, reason))
    return labels, violations


def _step_operator(system: AaoSystem, *, cap: int | None = None) -> Array:
    """Dense ``S = Q1^{-1} Q2`` at the averaged coefficient."""
    _check_cap(system.n_space, cap)
    scale = float(np.mean(system.d))
    blocks = system.toeplitz_blocks(scale)
    return np.asarray(dense_solve(blocks.q1.toarray(), blocks.q2.toarray(), cap=cap))


def step_matrix_spectrum(system: AaoSystem, *, cap: int | None = None) -> ComplexArray:
    """Eigenvalues of ``Q1^{-1} Q2``."""
    return dense_eig(_step_operator(system, cap=cap), cap=cap)


def step_operator_norm(system: AaoSystem, *, cap: int | None = None) -> float:
    """``||Q1^{-1} Q2||_2``; at most one for symmetric negative semi-definite ``At``."""
    return float(la.norm(_step_operator(system, cap=cap), 2))


def jm_matrix(system: AaoSystem, *, cap: int | None = None) -> Array:
    """``J_M = (Q1^{-1} Q2)^M``."""
    return np.linalg.matrix_power(_step_operator(system, cap=cap), system.m_steps)


@dataclass(frozen=True)
class JmBounds:
    re_min: float
    re_max: float
    mod_min: float
    mod_max: float
    alpha: float

    @property
    def holds(self) -> bool:
        lo, hi = 1.0 - self.alpha - ANNULUS_SLACK, 1.0 + self.alpha + ANNULUS_SLACK
        return lo <= self.re_min and self.re_max <= hi and lo <= self.mod_min and self.mod_max <= hi


def jm_spectrum_bounds(system: AaoSystem, alpha: float, *, cap: int | None = None) -> JmBounds:
    """Extremes of the spectrum of ``I - alpha J_M``."""
    jm = jm_matrix(system, cap=cap)
    eig = dense_eig(np.eye(system.n_space) - alpha * jm, cap=cap)
    return JmBounds(
        re_min=float(eig.real.min()),
        re_max=float(eig.real.max()),
        mod_min=float(np.abs(eig).min()),
        mod_max=float(np.abs(eig).max()),
        alpha=float(alpha),
    )


def densify_preconditioned(
    system: AaoSystem, precond: AlphaPreconditioner, *, cap: int | None = None
) -> Array:
    """``P^{-1} M`` column by column through the production apply path."""
    return precond.apply_inverse(densify_M(system, cap=cap))


def _reduced_matrix(system: AaoSystem, precond: AlphaPreconditioner, chunk: int = 64) -> Array:
    n, m = system.n_space, system.m_steps
    last = np.empty((n, n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        lift = np.zeros((m * n, stop - start))
        lift[start:stop] = np.eye(stop - start)
        last[:, start:stop] = precond.apply_inverse(lift)[(m - 1) * n :]
    q2 = system.toeplitz_blocks().q2.csr
    return np.eye(n) + precond.alpha * np.asarray(q2 @ last)


def preconditioned_spectrum(
    system: AaoSystem,
    alpha: float,
    *,
    precond: AlphaPreconditioner | None = None,
    tol_unit: float = UNIT_TOL,
    slack: float = ANNULUS_SLACK,
    cap: int | None = None,
    threads: int | None = None,
) -> SpectrumReport:
    """Eigenvalues of ``P^{-1} M`` classified against the unit cluster and the annulus.

    SingularPreconditioner from building ``P`` propagates.
    """
    limit = settings.oracle_cap if cap is None else cap
    precond = precond or AlphaPreconditioner.build(alpha, system, threads=threads)
    if system.size <= limit:
        eig = dense_eig(densify_preconditioned(system, precond, cap=limit), cap=limit)
        labels, violations = _classify(eig, alpha, tol_unit, slack)
        method = "dense"
    elif system.n_space <= limit and not system.time_varying:
        reduced = dense_eig(_reduced_matrix(system, precond), cap=limit)
        deflated = (system.m_steps - 1) * system.n_space
        eig = np.concatenate([np.ones(deflated, dtype=np.complex128), reduced])
        reduced_labels, violations = _classify(reduced, alpha, tol_unit, slack, unit_allowed=False)
        labels = [EigenClass.UNIT] * deflated + reduced_labels
        method = "structured"
    else:
        raise OracleCapExceeded(system.size, limit)
    n_unit = sum(label is EigenClass.UNIT for label in labels)
    n_annulus = sum(label is EigenClass.ANNULUS for label in labels)
    log.debug(
        "spectrum (%s): %d unit, %d annulus, %d violations", method, n_unit, n_annulus, len(violations)
    )
    return SpectrumReport(
        eigenvalues=eig,
        n_unit=n_unit,
        n_annulus=n_annulus,
        violations=violations,
        alpha=float(alpha),
        tol_unit=tol_unit,
        labels=tuple(labels),
        method=method,
    )


def space_spectrum(system: AaoSystem, *, cap: int | None = None) -> ComplexArray:
    """Eigenvalues of ``At``."""
    return dense_eig(system.a_tilde.toarray(), cap=cap)


def matrix_spectrum(system: AaoSystem, *, cap: int | None = None) -> ComplexArray:
    """Eigenvalues of ``M``: the union over steps of those of ``I - d_k At/2``."""
    mu = space_spectrum(system, cap=cap)
    eig = np.concatenate([1.0 - 0.5 * d * mu for d in system.d])
    return eig[np.lexsort((eig.imag, eig.real))]


@dataclass(frozen=True)
class ProbeResult:
    eigvec_condition: float
    informational: bool
    n_unit: int


def diagonalizability_probe(
    system: AaoSystem, alpha: float, *, tol_unit: float = UNIT_TOL, cap: int | None = None
) -> ProbeResult:
    """Condition number of a numerical eigenvector basis of ``P^{-1} M``.

    The unit cluster gets an orthonormal basis of ``null(P^{-1} M - I)``;
    the remaining columns are unit-normalized eigenvectors. Outside the
    symmetric negative semi-definite class the value is informational.
    """
    precond = AlphaPreconditioner.build(alpha, system)
    dense = densify_preconditioned(system, precond, cap=cap)
    w, vecs = dense_eig(dense, vectors=True, cap=cap)
    unit = np.abs(w - 1.0) <= tol_unit
    basis = vecs / np.linalg.norm(vecs, axis=0)
    n_unit = int(unit.sum())
    if n_unit:
        kernel = la.null_space(dense - np.eye(dense.shape[0]), rcond=tol_unit)
        if kernel.shape[1] == n_unit:
            basis = np.concatenate([kernel.astype(np.complex128), basis[:, ~unit]], axis=1)
        else:
            log.debug("unit eigenspace has dimension %d, cluster size %d", kernel.shape[1], n_unit)
    flags = system.a_tilde.flags
    informational = not (flags.symmetric and flags.definiteness is Definiteness.NEGATIVE_SEMIDEFINITE)
    return ProbeResult(float(np.linalg.cond(basis)), informational, n_unit)


@dataclass(frozen=True)
class MrNormResult:
    norm_minv_r: float
    bound: float
    holds: bool
    method: str = "dense"


def mr_norm_bound_check(system: AaoSystem, *, cap: int | None = None) -> MrNormResult:
    """``||M^{-1} R||_2`` against ``sqrt(M)`` for symmetric negative semi-definite ``At``."""
    flags = system.a_tilde.flags
    if not (flags.symmetric and flags.definiteness is Definiteness.NEGATIVE_SEMIDEFINITE):
        raise TheoremPreconditionViolated("the norm bound needs a symmetric negative semi-definite matrix")
    limit = settings.oracle_cap if cap is None else cap
    m, n = system.m_steps, system.n_space
    q2 = system.toeplitz_blocks().q2.toarray()
    if system.size <= limit:
        r = np.zeros((m * n, m * n))
        r[:n, (m - 1) * n :] = q2
        norm = float(la.norm(dense_solve(densify_M(system, cap=limit), r, cap=limit), 2))
        method = "dense"
    else:
        # nonzero column block of M^{-1} R is [S; S^2; ...; S^M]
        s = _step_operator(system, cap=limit)
        gram = np.zeros((n, n))
        power = np.eye(n)
        for _ in range(m):
            power = s @ power
            gram += power.T @ power
        norm = float(math.sqrt(max(la.eigvalsh(gram).max(), 0.0)))
        method = "structured"
    bound = math.sqrt(m)
    return MrNormResult(norm, bound, norm <= bound + 1e-8, method)
