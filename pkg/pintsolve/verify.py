"""Registry of numerical self-checks run by ``pintsolve verify``."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from pydantic import BaseModel, Field

from . import aao, analysis, precond
from .core import Definiteness, DftPlan, SparseMatrix, dense_solve, densify, dft_apply, spmv
from .errors import PintError, SingularPreconditioner
from .krylov import GmresConfig, gmres_left, gmres_right, rate_bound_check
from .presets import load_preset
from .spatial import Grid1D, build_biharmonic_1d, build_elliptic_1d, build_riesz_1d

log = logging.getLogger(__name__)


class Scope(str, Enum):
    ALL = "all"
    CORE = "core"
    SPECTRAL = "spectral"
    CONVERGENCE = "convergence"


class CheckResult(BaseModel):
    name: str
    scope: Scope
    passed: bool
    detail: str = ""
    seconds: float = 0.0


class VerifySummary(BaseModel):
    scope: Scope
    seed: int
    passed: bool
    n_passed: int
    n_failed: int
    results: list[CheckResult] = Field(default_factory=list)

    @property
    def failed(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]


class CheckFailed(AssertionError):
    pass


CheckFn = Callable[[np.random.Generator], str]


@dataclass(frozen=True)
class _Check:
    name: str
    scope: Scope
    fn: CheckFn


REGISTRY: dict[str, _Check] = {}


def check(name: str, scope: Scope) -> Callable[[CheckFn], CheckFn]:
    def register(fn: CheckFn) -> CheckFn:
        REGISTRY[name] = _Check(name, scope, fn)
        return fn

    return register


def expect(condition: bool, message: str) -> None:
    if not condition:
        raise CheckFailed(message)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b)) / (scale if scale > 0 else 1.0)


def random_nsd_matrix(n: int, rng: np.random.Generator, scale: float = 10.0) -> SparseMatrix:
    """Random symmetric negative semi-definite matrix with eigenvalues in ``[-scale, 0]``."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = -scale * rng.random(n)
    dense = (q * eig) @ q.T
    dense = 0.5 * (dense + dense.T)
    return SparseMatrix.from_any(dense, symmetric=True, definiteness=Definiteness.NEGATIVE_SEMIDEFINITE)


def heat_system(m_steps: int, n_interior: int, t_final: float = 1.0) -> aao.AaoSystem:
    """``u_t = u_xx`` on ``(0, 1)`` with ``u(x, 0) = sin(pi x)``."""
    grid = Grid1D.uniform(0.0, 1.0, n_interior + 1)
    problem = build_elliptic_1d(1.0, 0.0, 0.0, grid)
    return aao.assemble(problem, t_final, m_steps, np.sin(np.pi * grid.interior))


# core


@check("core.dft_unitary", Scope.CORE)
def _dft_unitary(rng: np.random.Generator) -> str:
    m = 16
    plan = DftPlan(m)
    delta = np.zeros(m)
    delta[0] = 1.0
    expect(np.allclose(dft_apply(plan, delta), 1.0 / math.sqrt(m), atol=1e-15), "delta does not map to 1/sqrt(M)")
    x = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    y = dft_apply(plan, x)
    expect(abs(np.linalg.norm(y) - np.linalg.norm(x)) <= 1e-13 * np.linalg.norm(x), "norm not preserved")
    back = _rel(dft_apply(plan.inverse(), y), x)
    expect(back <= 1e-13, f"round trip error {back:.2e}")
    return f"round trip {back:.1e}"


@check("core.dense_solve", Scope.CORE)
def _dense_solve(rng: np.random.Generator) -> str:
    n = 200
    a = rng.standard_normal((n, n)) + n * np.eye(n)
    x = rng.standard_normal(n)
    err = _rel(dense_solve(a, a @ x), x)
    expect(err <= 1e-10, f"relative error {err:.2e}")
    return f"relative error {err:.1e}"


@check("core.spmv_linearity", Scope.CORE)
def _spmv_linearity(rng: np.random.Generator) -> str:
    a = SparseMatrix.from_any(sp.random(400, 400, density=0.05, random_state=int(rng.integers(1 << 31))))
    x, y = rng.standard_normal(400), rng.standard_normal(400)
    err = _rel(spmv(a, x + y), spmv(a, x) + spmv(a, y))
    expect(err <= 1e-14, f"distributivity error {err:.2e}")
    return f"{a.nnz} nonzeros"


def _oracle_systems() -> Iterable[tuple[str, aao.AaoSystem]]:
    grid = Grid1D.uniform(0.0, 1.0, 16)
    yield "elliptic1d", heat_system(8, 15)
    variable = build_elliptic_1d(lambda x: 1.0 + x, lambda x: 0.5 * x, 1.0, grid)
    yield "elliptic1d-variable", aao.assemble(variable, 1.0, 8, np.sin(np.pi * grid.interior))
    riesz = build_riesz_1d([1.5], [1.0], grid)
    yield "riesz1d", aao.assemble(riesz, 1.0, 8, np.sin(np.pi * grid.interior))
    bih = build_biharmonic_1d(0.01, grid)
    yield "biharmonic1d", aao.assemble(bih, 0.1, 8, np.sin(np.pi * grid.interior))
    for name in ("set1", "set5"):
        _, system = load_preset(name).assemble(8)
        yield name, system


@check("aao.oracle_equivalence", Scope.CORE)
def _oracle_equivalence(rng: np.random.Generator) -> str:
    worst = 0.0
    for name, system in _oracle_systems():
        dense = dense_solve(aao.densify_M(system), system.rhs.data)
        err = _rel(aao.solve_sequential(system).data, dense)
        expect(err <= 1e-11, f"{name}: sequential vs dense {err:.2e}")
        worst = max(worst, err)
    return f"worst {worst:.1e}"


@check("aao.apply_matches_kron", Scope.CORE)
def _apply_matches(rng: np.random.Generator) -> str:
    system = aao.from_a_tilde(random_nsd_matrix(6, rng), 5, d_profile=np.exp(-0.1 * np.arange(5)))
    applied = densify(lambda x: aao.apply_M(system, x), system.size)
    err = float(np.max(np.abs(applied - aao.densify_M(system))))
    expect(err <= 1e-13, f"matrix-free product differs by {err:.2e}")
    return f"max difference {err:.1e}"


@check("aao.stability", Scope.CORE)
def _stability(rng: np.random.Generator) -> str:
    worst = 0.0
    for _ in range(50):
        system = aao.from_a_tilde(random_nsd_matrix(int(rng.integers(2, 24)), rng, 50.0), 4)
        worst = max(worst, analysis.step_operator_norm(system))
    expect(worst <= 1.0 + 1e-12, f"step operator norm {worst:.15f}")
    return f"max norm {worst:.12f}"


@check("aao.condition_bound", Scope.CORE)
def _condition_bound(rng: np.random.Generator) -> str:
    for i in range(50):
        m, n = int(rng.integers(2, 17)), int(rng.integers(2, 33))
        system = aao.from_a_tilde(random_nsd_matrix(n, rng, 20.0), m)
        bound = aao.condition_bound(system, verify=True)
        expect(bool(bound.holds), f"instance {i} (M={m}, N={n}): {bound}")
    return "50 instances"


@check("precond.lambda_table", Scope.CORE)
def _lambda_table(rng: np.random.Generator) -> str:
    for alpha, m in ((0.01, 2), (1e-3, 7), (0.5, 16)):
        system = aao.from_a_tilde(-np.eye(1), m)
        p = precond.AlphaPreconditioner.build(alpha, system)
        phase = np.exp(2j * np.pi * np.arange(m) / m)
        root = alpha ** (1.0 / m)
        err1 = float(np.max(np.abs(p.lambda1 - (1.0 - root * phase))))
        err2 = float(np.max(np.abs(p.lambda2 - (0.5 + 0.5 * root * phase))))
        expect(err1 <= 1e-14 and err2 <= 1e-14, f"alpha={alpha}, M={m}: table error {max(err1, err2):.2e}")
        pairing = max(precond.conjugate_pairing_error(p.lambda1), precond.conjugate_pairing_error(p.lambda2))
        expect(pairing == 0.0, f"alpha={alpha}, M={m}: conjugate pairing off by {pairing:.2e}")
        if alpha < 1.0:
            expect(bool(np.all(p.lambda1.real > 0) and np.all(p.lambda2.real > 0)), "nonpositive real part")
    return "closed form and pairing exact"


@check("precond.apply_equivalence", Scope.CORE)
def _apply_equivalence(rng: np.random.Generator) -> str:
    worst = 0.0
    for m, n in ((4, 16), (8, 32), (16, 64)):
        system = aao.from_a_tilde(random_nsd_matrix(n, rng, 5.0), m)
        v = rng.standard_normal(system.size)
        for alpha in (0.5, 0.1, 1e-3):
            p = precond.AlphaPreconditioner.build(alpha, system)
            err = _rel(p.apply_inverse(v), dense_solve(p.dense_matrix(), v))
            expect(err <= 1e-10, f"M={m}, N={n}, alpha={alpha}: {err:.2e}")
            worst = max(worst, err)
    return f"worst {worst:.1e}"


@check("precond.conjugate_halving", Scope.CORE)
def _conjugate_halving(rng: np.random.Generator) -> str:
    system = aao.from_a_tilde(random_nsd_matrix(12, rng, 5.0), 8)
    v = rng.standard_normal(system.size)
    half = precond.AlphaPreconditioner.build(0.1, system)
    full = precond.AlphaPreconditioner.build(0.1, system, conjugate_pairs=False)
    expect(half.factorizations == 5 and full.factorizations == 8, "unexpected factorization counts")
    err = _rel(half.apply_inverse(v), full.apply_inverse(v))
    expect(err <= 1e-14, f"halved vs full solve {err:.2e}")
    return f"difference {err:.1e}"


@check("precond.roundtrip", Scope.CORE)
def _roundtrip(rng: np.random.Generator) -> str:
    system = aao.from_a_tilde(random_nsd_matrix(16, rng, 5.0), 8)
    p = precond.AlphaPreconditioner.build(0.1, system)
    value = p.residual_check_roundtrip(rng.standard_normal(system.size))
    expect(value <= 1e-10, f"round trip residual {value:.2e}")
    return f"residual {value:.1e}"


# spectral


@check("spectral.heat_cluster", Scope.SPECTRAL)
def _heat_cluster(rng: np.random.Generator) -> str:
    alpha = 0.1
    system = heat_system(8, 15)
    report = analysis.preconditioned_spectrum(system, alpha)
    expect(report.n_unit == 105, f"unit cluster has {report.n_unit} eigenvalues, expected 105")
    expect(report.n_annulus == 15 and not report.violations, f"annulus {report.n_annulus}, {report.violations}")
    rest = report.non_unit
    expect(bool(np.all(np.abs(rest.imag) <= 1e-10)), "non-unit eigenvalues are not real")
    lo, hi = 1.0 / (1.0 + alpha), 1.0 / (1.0 - alpha)
    expect(bool(np.all((rest.real >= lo - 1e-10) & (rest.real <= hi + 1e-10))), "outside the real interval")
    return f"{report.n_unit} unit, {report.n_annulus} in [{lo:.4f}, {hi:.4f}]"


@check("spectral.boundary_attainment", Scope.SPECTRAL)
def _boundary_attainment(rng: np.random.Generator) -> str:
    for alpha in (0.1, 0.5):
        system = aao.from_a_tilde(np.zeros((1, 1)), 6)
        report = analysis.preconditioned_spectrum(system, alpha)
        err = float(np.max(np.abs(report.non_unit - 1.0 / (1.0 - alpha))))
        expect(report.non_unit.size == 1 and err <= 1e-12, f"alpha={alpha}: {report.non_unit}")
    return "1/(1-alpha) attained"


@check("spectral.step_bounds", Scope.SPECTRAL)
def _step_bounds(rng: np.random.Generator) -> str:
    for i in range(100):
        n, m = int(rng.integers(1, 25)), int(rng.integers(1, 9))
        alpha = float(rng.uniform(0.01, 0.9))
        system = aao.from_a_tilde(random_nsd_matrix(n, rng, 30.0), m)
        eig = analysis.step_matrix_spectrum(system)
        expect(bool(np.all(eig.real > -1.0) and np.all(eig.real <= 1.0 + 1e-10)), f"instance {i}: Re out of range")
        expect(bool(np.all(np.abs(eig) <= 1.0 + 1e-10)), f"instance {i}: modulus above one")
        expect(analysis.jm_spectrum_bounds(system, alpha).holds, f"instance {i}: I - alpha J_M out of bounds")
    return "100 instances"


@check("spectral.mr_norm", Scope.SPECTRAL)
def _mr_norm(rng: np.random.Generator) -> str:
    results = [analysis.mr_norm_bound_check(heat_system(8, 15)), analysis.mr_norm_bound_check(heat_system(32, 32))]
    for result in results:
        expect(result.holds, f"||M^-1 R|| = {result.norm_minv_r:.6f} > {result.bound:.6f}")
    return ", ".join(f"{r.norm_minv_r:.4f} <= {r.bound:.4f}" for r in results)


# convergence


@check("convergence.exact_preconditioner", Scope.CONVERGENCE)
def _exact_preconditioner(rng: np.random.Generator) -> str:
    a = rng.standard_normal((30, 30)) + 30 * np.eye(30)
    inv = np.linalg.inv(a)
    _, report = gmres_right(lambda x: a @ x, lambda x: inv @ x, rng.standard_normal(30))
    expect(report.converged and report.iterations == 1, f"{report.iterations} iterations")
    return "1 iteration"


@check("convergence.rate_bound", Scope.CONVERGENCE)
def _rate_bound(rng: np.random.Generator) -> str:
    system = heat_system(32, 32)
    alpha = 0.25 * math.sqrt(system.tau / system.t_final)
    p = precond.AlphaPreconditioner.build(alpha, system)
    cfg = GmresConfig(restart=system.size, tol=1e-12, max_total_iters=system.size)
    _, report = gmres_left(lambda u: aao.apply_M(system, u), p.apply_inverse, system.rhs.data, cfg)
    verdict = rate_bound_check(report, alpha, system.tau, system.t_final)
    expect(verdict.holds, f"history exceeds {verdict.bound_rate:.3f}^k by {verdict.worst_excess:.2e}")
    return f"{report.iterations} iterations under rate {verdict.bound_rate:.3f}"


@check("convergence.p1_palpha_agree", Scope.CONVERGENCE)
def _p1_palpha(rng: np.random.Generator) -> str:
    system = heat_system(16, 31)

    def solve(alpha: float) -> np.ndarray:
        p = precond.AlphaPreconditioner.build(alpha, system)
        x, report = gmres_right(lambda u: aao.apply_M(system, u), p.apply_inverse, system.rhs.data)
        report.raise_for_status(x)
        return x

    err = _rel(solve(1.0), solve(1e-3))
    expect(err <= 1e-7, f"solutions differ by {err:.2e}")
    return f"difference {err:.1e}"


@check("convergence.p1_singular_sabr", Scope.CONVERGENCE)
def _p1_singular(rng: np.random.Generator) -> str:
    _, system = load_preset("set3").assemble(8)
    try:
        precond.AlphaPreconditioner.build(1.0, system)
    except SingularPreconditioner as exc:
        expect(exc.k == 1, f"singular block reported at k={exc.k}")
        return str(exc)
    raise CheckFailed("P1 built without error on a singular operator")


def run_verify(scope: Scope | str = Scope.ALL, *, seed: int = 0, names: Optional[Iterable[str]] = None) -> VerifySummary:
    """Run every registered check in ``scope`` (or the named ones) and collect the verdicts."""
    scope = Scope(scope)
    wanted = set(names) if names is not None else None
    results = []
    for item in REGISTRY.values():
        if wanted is not None and item.name not in wanted:
            continue
        if wanted is None and scope is not Scope.ALL and item.scope is not scope:
            continue
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        try:
            detail = item.fn(rng)
            passed = True
        except (CheckFailed, PintError, la.LinAlgError) as exc:
            detail = f"{type(exc).__name__}: {exc}"
            passed = False
        elapsed = time.perf_counter() - start
        log.info("%s %s (%.2fs) %s", "PASS" if passed else "FAIL", item.name, elapsed, detail)
        results.append(CheckResult(name=item.name, scope=item.scope, passed=passed, detail=detail, seconds=elapsed))
    n_failed = sum(not r.passed for r in results)
    return VerifySummary(
        scope=scope,
        seed=seed,
        passed=n_failed == 0,
        n_passed=len(results) - n_failed,
        n_failed=n_failed,
        results=results,
    )
