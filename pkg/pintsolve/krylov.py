"""Restarted GMRES with right (default) or left preconditioning."""

from __future__ import annotations

import logging
import math
from enum import Enum
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
from pydantic import BaseModel, Field, field_validator

from .config import settings
from .core import Array
from .errors import DimensionMismatch, NoConvergence, ParameterError, TheoremPreconditionViolated

log = logging.getLogger(__name__)

Operator = Callable[[Array], Array]

REORTH_THRESHOLD = 1e-8


class Side(str, Enum):
    RIGHT = "right"
    LEFT = "left"


class GmresConfig(BaseModel):
    restart: int = Field(default_factory=lambda: settings.gmres_restart, ge=1)
    tol: float = Field(default_factory=lambda: settings.gmres_tol, gt=0.0, lt=1.0)
    max_total_iters: int = Field(default_factory=lambda: settings.gmres_max_iters, ge=1)
    record_history: bool = True


class GmresReport(BaseModel):
    """Iteration record of one GMRES solve.

    ``residual_history`` starts with the initial residual norm and then holds
    one entry per iteration: the Givens least-squares estimate of the residual
    norm (of the preconditioned residual in left mode), not a recomputed
    ``||b - A x||``. The true residual norms ``||b - A x||`` are recomputed only
    at each restart boundary and at acceptance and live in ``true_residuals``.
    """

    iterations: int = 0
    converged: bool = False
    happy_breakdown: bool = False
    residual_history: list[float] = Field(
        default_factory=list, description="Initial norm, then one least-squares estimate per iteration"
    )
    true_residuals: list[float] = Field(
        default_factory=list, description="||b - A x|| at each restart boundary and at acceptance"
    )
    final_relres: float = math.nan
    true_relres: float = math.nan
    restart: int
    tol: float
    side: Side = Side.RIGHT
    restarts: int = 0

    @field_validator("residual_history", "true_residuals")
    @classmethod
    def _finite(cls, values: list[float]) -> list[float]:
        return [float(v) for v in values]

    def relative_history(self) -> list[float]:
        if not self.residual_history or self.residual_history[0] == 0.0:
            return []
        r0 = self.residual_history[0]
        return [r / r0 for r in self.residual_history]

    def raise_for_status(self, solution: Optional[Array] = None) -> None:
        if not self.converged:
            raise NoConvergence(self, solution)


def _identity(x: Array) -> Array:
    return x


def _arnoldi_step(V: Array, H: Array, j: int, w: Array) -> float:
    """Modified Gram-Schmidt against ``V[:j+1]`` with one optional second pass."""
    for i in range(j + 1):
        H[i, j] = float(V[i] @ w)
        w -= H[i, j] * V[i]
    norm_w = float(np.linalg.norm(w))
    if norm_w > 0.0:
        overlap = V[: j + 1] @ w
        if float(np.max(np.abs(overlap))) / norm_w > REORTH_THRESHOLD:
            H[: j + 1, j] += overlap
            w -= overlap @ V[: j + 1]
            norm_w = float(np.linalg.norm(w))
    return norm_w


def gmres(
    op: Operator,
    b: Array,
    precond: Operator | None = None,
    cfg: GmresConfig | None = None,
    *,
    side: Side | str = Side.RIGHT,
) -> tuple[Array, GmresReport]:
    """Solve ``A x = b`` from a zero initial guess.

    Right mode iterates on ``A P^{-1} y = b`` and accepts on the true relative
    residual ``||b - A x|| / ||b||``. Left mode iterates on
    ``P^{-1} A x = P^{-1} b`` and accepts on the preconditioned residual.
    Non-convergence is reported, not raised; see
    :meth:`GmresReport.raise_for_status`.
    """
    cfg = cfg or GmresConfig()
    side = Side(side)
    pinv = precond or _identity
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    n = b.size
    report = GmresReport(restart=cfg.restart, tol=cfg.tol, side=side)
    x = np.zeros(n)

    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        report.converged = True
        report.final_relres = report.true_relres = 0.0
        report.residual_history = [0.0]
        return x, report

    def apply(v: Array) -> Array:
        # copied: Arnoldi orthogonalizes the result in place
        out = np.array(op(pinv(v)) if side is Side.RIGHT else pinv(op(v)), dtype=np.float64)
        if out.shape != (n,):
            raise DimensionMismatch(f"operator returned shape {out.shape}, expected ({n},)")
        return out

    r = b.copy() if side is Side.RIGHT else np.asarray(pinv(b), dtype=np.float64)
    beta = float(np.linalg.norm(r))
    if beta == 0.0:
        raise ParameterError("the preconditioner maps the right-hand side to zero")
    ref = norm_b if side is Side.RIGHT else beta
    history = [beta]
    true_residuals: list[float] = []
    target = cfg.tol * ref
    m = cfg.restart
    total = 0

    while True:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        breakdown = False
        stalled = False

        for j in range(m):
            w = apply(V[j])
            h_next = _arnoldi_step(V, H, j, w)
            H[j + 1, j] = h_next
            for i in range(j):
                hi, hi1 = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * hi + sn[i] * hi1
                H[i + 1, j] = -sn[i] * hi + cs[i] * hi1
            denom = math.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                stalled = True
                break
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j], H[j + 1, j] = denom, 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            k = j + 1
            total += 1
            history.append(abs(float(g[j + 1])))
            if h_next <= np.finfo(float).eps * max(denom, 1.0):
                breakdown = True
                break
            if history[-1] <= target or total >= cfg.max_total_iters:
                break
            V[j + 1] = w / h_next

        if k > 0:
            y = la.solve_triangular(H[:k, :k], g[:k])
            update = y @ V[:k]
            x += pinv(update) if side is Side.RIGHT else update

        residual = b - np.asarray(op(x), dtype=np.float64)
        true_norm = float(np.linalg.norm(residual))
        true_residuals.append(true_norm)
        if side is Side.RIGHT:
            r, beta = residual, true_norm
        else:
            r = np.asarray(pinv(residual), dtype=np.float64)
            beta = float(np.linalg.norm(r))

        if breakdown or beta <= target:
            report.converged = True
            report.happy_breakdown = breakdown
            break
        if stalled or total >= cfg.max_total_iters or k == 0:
            break
        report.restarts += 1
        log.debug("GMRES restart %d after %d iterations, relres %.3e", report.restarts, total, beta / ref)

    report.iterations = total
    report.final_relres = history[-1] / history[0]
    report.true_relres = true_residuals[-1] / norm_b
    if cfg.record_history:
        report.residual_history = history
        report.true_residuals = true_residuals
    else:
        report.residual_history = [history[0], history[-1]]
        report.true_residuals = true_residuals[-1:]
    log.debug(
        "GMRES(%d, %s) %s in %d iterations, relres %.3e",
        m, side.value, "converged" if report.converged else "stopped", total, report.final_relres,
    )
    return x, report


def gmres_right(
    op: Operator, precond: Operator | None, b: Array, cfg: GmresConfig | None = None
) -> tuple[Array, GmresReport]:
    return gmres(op, b, precond, cfg, side=Side.RIGHT)


def gmres_left(
    op: Operator, precond: Operator | None, b: Array, cfg: GmresConfig | None = None
) -> tuple[Array, GmresReport]:
    return gmres(op, b, precond, cfg, side=Side.LEFT)


class RateBoundResult(BaseModel):
    holds: bool
    delta: float
    bound_rate: float
    advisory: bool
    worst_excess: float = 0.0
    checked: int = 0


def rate_bound_check(report: GmresReport, alpha: float, tau: float, t_final: float) -> RateBoundResult:
    """Compare ``||r_k|| / ||r_0||`` with ``[2 sqrt(delta) (1 - delta)]^k``, ``delta = alpha sqrt(T/tau)``.

    Only the first restart cycle is checked. Right-mode histories give an
    advisory verdict.
    """
    if tau <= 0 or t_final <= 0 or alpha <= 0:
        raise TheoremPreconditionViolated("alpha, tau and T must be positive")
    delta = alpha * math.sqrt(t_final / tau)
    if delta >= 0.5:
        raise TheoremPreconditionViolated(f"delta = {delta:.3g} must be below 1/2")
    if len(report.residual_history) < 2 and report.iterations > 0:
        raise TheoremPreconditionViolated("the report carries no residual history")
    rate = 2.0 * math.sqrt(delta) * (1.0 - delta)
    ratios = report.relative_history()[: report.restart + 1]
    worst = 0.0
    holds = True
    for k, ratio in enumerate(ratios):
        bound = rate**k
        excess = ratio - bound
        worst = max(worst, excess)
        if excess > 1e-12 * max(bound, 1e-300) and ratio > 1e-14:
            holds = False
    return RateBoundResult(
        holds=holds,
        delta=delta,
        bound_rate=rate,
        advisory=report.side is Side.RIGHT,
        worst_excess=worst,
        checked=len(ratios),
    )
