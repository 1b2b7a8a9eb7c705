import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from pintsolve import aao
from pintsolve.errors import NoConvergence, ParameterError, TheoremPreconditionViolated
from pintsolve.krylov import GmresConfig, GmresReport, Side, gmres, gmres_left, gmres_right, rate_bound_check
from pintsolve.precond import AlphaPreconditioner
from pintsolve.verify import heat_system


@pytest.fixture
def system_matrix(rng):
    return rng.standard_normal((40, 40)) + 12 * np.eye(40)


class TestConfig:
    def test_defaults(self):
        cfg = GmresConfig()
        assert (cfg.restart, cfg.tol) == (40, 1e-9)

    @pytest.mark.parametrize("kwargs", [{"restart": 0}, {"tol": 1.0}, {"tol": 0.0}, {"max_total_iters": 0}])
    def test_validation(self, kwargs):
        with pytest.raises(ValidationError):
            GmresConfig(**kwargs)


class TestGmres:
    def test_exact_preconditioner_one_iteration(self, system_matrix, rng):
        inv = np.linalg.inv(system_matrix)
        x, report = gmres_right(lambda v: system_matrix @ v, lambda v: inv @ v, rng.standard_normal(40))
        assert report.converged and report.iterations == 1

    def test_unpreconditioned_solution(self, system_matrix, rng):
        b = rng.standard_normal(40)
        x, report = gmres(lambda v: system_matrix @ v, b, cfg=GmresConfig(restart=40, tol=1e-12))
        assert report.converged
        assert report.iterations <= 40
        assert_allclose(system_matrix @ x, b, atol=1e-10 * np.linalg.norm(b))

    def test_history_starts_at_rhs_norm_and_decreases(self, system_matrix, rng):
        b = rng.standard_normal(40)
        _, report = gmres(lambda v: system_matrix @ v, b, cfg=GmresConfig(restart=40, tol=1e-10))
        history = np.array(report.residual_history)
        assert history[0] == pytest.approx(np.linalg.norm(b))
        assert len(history) == report.iterations + 1
        assert np.all(np.diff(history) <= 1e-12 * history[0])
        assert report.relative_history()[0] == 1.0

    def test_zero_rhs(self, system_matrix):
        x, report = gmres(lambda v: system_matrix @ v, np.zeros(40))
        assert report.converged and report.iterations == 0
        assert not np.any(x)

    def test_happy_breakdown(self):
        b = np.zeros(10)
        b[0] = 3.0
        x, report = gmres(lambda v: v, b)
        assert report.converged and report.happy_breakdown
        assert report.iterations == 1

    def test_restarts_recorded(self, system_matrix, rng):
        b = rng.standard_normal(40)
        x, report = gmres(lambda v: system_matrix @ v, b, cfg=GmresConfig(restart=3, tol=1e-10))
        assert report.converged
        assert report.restarts > 0
        assert len(report.true_residuals) == report.restarts + 1
        assert report.true_relres <= 1e-10

    def test_estimates_match_true_residual_at_cycle_end(self, system_matrix, rng):
        b = rng.standard_normal(40)
        x, report = gmres(lambda v: system_matrix @ v, b, cfg=GmresConfig(restart=5, max_total_iters=5))
        # one cycle: one estimate per iteration, one true residual at its end
        assert len(report.residual_history) == 6
        assert len(report.true_residuals) == 1
        true = np.linalg.norm(b - system_matrix @ x)
        assert report.true_residuals[0] == pytest.approx(true)
        assert report.residual_history[-1] == pytest.approx(true, rel=1e-8)

    def test_no_convergence_reported(self, system_matrix, rng):
        x, report = gmres(lambda v: system_matrix @ v, rng.standard_normal(40), cfg=GmresConfig(max_total_iters=2))
        assert not report.converged
        assert report.iterations == 2
        with pytest.raises(NoConvergence) as info:
            report.raise_for_status(x)
        assert info.value.report is report
        assert info.value.solution is x

    def test_left_and_right_agree(self, heat):
        p = AlphaPreconditioner.build(0.01, heat)
        op = lambda u: aao.apply_M(heat, u)
        cfg = GmresConfig(tol=1e-11)
        x_right, right = gmres_right(op, p.apply_inverse, heat.rhs.data, cfg)
        x_left, left = gmres_left(op, p.apply_inverse, heat.rhs.data, cfg)
        assert right.side is Side.RIGHT and left.side is Side.LEFT
        assert_allclose(x_left, x_right, atol=1e-8 * np.linalg.norm(x_right))
        assert right.iterations <= 10

    def test_zero_preconditioned_rhs(self, system_matrix, rng):
        with pytest.raises(ParameterError):
            gmres_left(lambda v: system_matrix @ v, lambda v: 0.0 * v, rng.standard_normal(40))

    def test_short_history(self, system_matrix, rng):
        _, report = gmres(lambda v: system_matrix @ v, rng.standard_normal(40), cfg=GmresConfig(record_history=False))
        assert len(report.residual_history) == 2
        assert len(report.true_residuals) == 1


class TestRateBound:
    def test_heat_history_under_bound(self):
        system = heat_system(32, 32)
        alpha = 0.25 * math.sqrt(system.tau / system.t_final)
        p = AlphaPreconditioner.build(alpha, system)
        cfg = GmresConfig(restart=system.size, tol=1e-12, max_total_iters=system.size)
        _, report = gmres_left(lambda u: aao.apply_M(system, u), p.apply_inverse, system.rhs.data, cfg)
        verdict = rate_bound_check(report, alpha, system.tau, system.t_final)
        assert verdict.delta == pytest.approx(0.25)
        assert verdict.bound_rate == pytest.approx(0.75)
        assert verdict.holds and not verdict.advisory
        assert verdict.checked == report.iterations + 1

    def test_right_mode_is_advisory(self, heat):
        p = AlphaPreconditioner.build(0.01, heat)
        _, report = gmres_right(lambda u: aao.apply_M(heat, u), p.apply_inverse, heat.rhs.data)
        assert rate_bound_check(report, 0.01, heat.tau, heat.t_final).advisory

    def test_large_delta_rejected(self, heat):
        _, report = gmres(lambda v: v, heat.rhs.data)
        with pytest.raises(TheoremPreconditionViolated):
            rate_bound_check(report, 0.5, heat.tau, heat.t_final)

    def test_failed_bound_detected(self):
        report = GmresReport(restart=40, tol=1e-9, residual_history=[1.0, 0.9, 0.8], iterations=2, side=Side.LEFT)
        verdict = rate_bound_check(report, 0.01, 1 / 100, 1.0)
        assert verdict.bound_rate < 0.9
        assert not verdict.holds
        assert verdict.worst_excess > 0
