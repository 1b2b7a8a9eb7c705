import dataclasses

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings as hsettings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from pintsolve import aao, precond
from pintsolve.config import settings
from pintsolve.core import dense_solve
from pintsolve.errors import DimensionMismatch, ImaginaryResidue, ParameterError, SingularPreconditioner
from pintsolve.precond import AlphaPolicy, AlphaPreconditioner, alpha_from_policy, eigenvalue_tables
from pintsolve.presets import load_preset
from pintsolve.verify import random_nsd_matrix


class TestEigenvalueTables:
    @given(
        st.floats(min_value=1e-4, max_value=1.0),
        st.integers(min_value=1, max_value=64),
    )
    @hsettings(max_examples=60, deadline=None)
    def test_closed_form_and_exact_pairing(self, alpha, m):
        lambda1, lambda2, gamma = eigenvalue_tables(alpha, m)
        phase = np.exp(2j * np.pi * np.arange(m) / m)
        root = alpha ** (1.0 / m)
        assert_allclose(lambda1, 1.0 - root * phase, atol=1e-14)
        assert_allclose(lambda2, 0.5 + 0.5 * root * phase, atol=1e-14)
        assert_allclose(gamma, alpha ** (np.arange(m) / m))
        assert precond.conjugate_pairing_error(lambda1) == 0.0
        assert precond.conjugate_pairing_error(lambda2) == 0.0

    def test_first_entries(self):
        lambda1, lambda2, gamma = eigenvalue_tables(1e-3, 8)
        assert lambda1[0] == 1.0 - 1e-3 ** (1 / 8)
        assert gamma[0] == 1.0
        assert lambda1[4].imag == 0.0

    def test_plain_circulant_has_zero_shift(self):
        lambda1, lambda2, _ = eigenvalue_tables(1.0, 6)
        assert lambda1[0] == 0.0
        assert lambda2[0] == 1.0

    def test_positive_real_parts(self):
        lambda1, lambda2, _ = eigenvalue_tables(0.5, 16)
        assert np.all(lambda1.real > 0) and np.all(lambda2.real > 0)

    def test_tables_read_only(self):
        lambda1, _, _ = eigenvalue_tables(0.1, 4)
        with pytest.raises(ValueError):
            lambda1[0] = 0.0

    def test_pairing_error_detects_mismatch(self):
        assert precond.conjugate_pairing_error([1.0, 1 + 1j, 2.0, 1 + 1j]) == pytest.approx(2.0)


class TestAlphaPolicy:
    def test_fixed_default(self):
        assert alpha_from_policy(AlphaPolicy.FIXED, 0.1, 1.0) == settings.default_alpha

    def test_delta_policy(self):
        assert alpha_from_policy("delta_sqrt_tau_over_T", 1 / 32, 1.0, delta=0.25) == pytest.approx(
            0.25 * np.sqrt(1 / 32)
        )

    @pytest.mark.parametrize("alpha", [0.0, 1.5, -0.1])
    def test_range(self, alpha):
        with pytest.raises(ParameterError):
            alpha_from_policy(AlphaPolicy.FIXED, 0.1, 1.0, alpha=alpha)


class TestApplyInverse:
    @pytest.mark.parametrize("alpha", [0.5, 0.1, 1e-3])
    @pytest.mark.parametrize("m,n", [(4, 16), (7, 9), (16, 64)])
    def test_matches_dense_solve(self, rng, alpha, m, n):
        system = aao.from_a_tilde(random_nsd_matrix(n, rng, 5.0), m)
        p = AlphaPreconditioner.build(alpha, system)
        v = rng.standard_normal(system.size)
        expected = dense_solve(p.dense_matrix(), v)
        assert_allclose(p.apply_inverse(v), expected, rtol=0, atol=1e-10 * np.linalg.norm(expected))

    def test_nonsymmetric_operator(self, rng):
        _, system = load_preset("set1").assemble(8)
        p = AlphaPreconditioner.build(1e-3, system)
        v = rng.standard_normal(system.size)
        expected = dense_solve(p.dense_matrix(), v)
        assert_allclose(p.apply_inverse(v), expected, rtol=0, atol=1e-9 * np.linalg.norm(expected))

    def test_time_varying_uses_mean_coefficient(self, rng):
        system = aao.from_a_tilde(random_nsd_matrix(6, rng), 5, d_profile=[1.0, 0.9, 0.8, 0.7, 0.6])
        p = AlphaPreconditioner.build(0.1, system)
        assert p.dbar == pytest.approx(0.8)
        v = rng.standard_normal(system.size)
        assert_allclose(p.apply(p.apply_inverse(v)), v, atol=1e-11)

    def test_columns(self, nsd_system, rng):
        p = AlphaPreconditioner.build(0.1, nsd_system)
        block = rng.standard_normal((nsd_system.size, 3))
        out = p.apply_inverse(block)
        assert out.shape == block.shape
        assert_allclose(out[:, 1], p.apply_inverse(block[:, 1]), rtol=1e-12, atol=1e-14)

    def test_apply_matches_dense(self, nsd_system, rng):
        p = AlphaPreconditioner.build(0.2, nsd_system)
        v = rng.standard_normal(nsd_system.size)
        assert_allclose(p.apply(v), p.dense_matrix() @ v, atol=1e-13)

    def test_conjugate_halving(self, rng):
        system = aao.from_a_tilde(random_nsd_matrix(12, rng, 5.0), 8)
        half = AlphaPreconditioner.build(0.1, system)
        full = AlphaPreconditioner.build(0.1, system, conjugate_pairs=False)
        assert (half.factorizations, full.factorizations) == (5, 8)
        v = rng.standard_normal(system.size)
        a, b = half.apply_inverse(v), full.apply_inverse(v)
        assert np.linalg.norm(a - b) <= 1e-14 * np.linalg.norm(b)

    def test_counts_sparse_factorizations(self, nsd_system, monkeypatch):
        calls = []
        real_splu = spla.splu

        def counting(*args, **kwargs):
            calls.append(args[0].shape)
            return real_splu(*args, **kwargs)

        monkeypatch.setattr(precond.spla, "splu", counting)
        AlphaPreconditioner.build(0.1, nsd_system)
        assert len(calls) == nsd_system.m_steps // 2 + 1

    def test_sine_path_matches_lu(self, heat, rng):
        fast = AlphaPreconditioner.build(0.1, heat)
        slow = AlphaPreconditioner.build(0.1, dataclasses.replace(heat, space_symbol=None))
        assert fast.uses_dst and not slow.uses_dst
        v = rng.standard_normal(heat.size)
        assert_allclose(fast.apply_inverse(v), slow.apply_inverse(v), atol=1e-12)

    def test_threads_do_not_change_result(self, nsd_system, rng):
        v = rng.standard_normal(nsd_system.size)
        one = AlphaPreconditioner.build(0.1, nsd_system, threads=1).apply_inverse(v)
        four = AlphaPreconditioner.build(0.1, nsd_system, threads=4).apply_inverse(v)
        assert_array_equal(one, four)

    def test_complex_input_rejected(self, nsd_system):
        p = AlphaPreconditioner.build(0.1, nsd_system)
        with pytest.raises(ParameterError):
            p.apply_inverse(np.ones(nsd_system.size, dtype=complex))

    def test_length_checked(self, nsd_system):
        p = AlphaPreconditioner.build(0.1, nsd_system)
        with pytest.raises(DimensionMismatch):
            p.apply_inverse(np.ones(nsd_system.size - 1))

    def test_tiny_alpha_leaves_imaginary_residue(self, rng):
        system = aao.from_a_tilde(random_nsd_matrix(8, rng, 5.0), 16)
        p = AlphaPreconditioner.build(1e-14, system)
        with pytest.raises(ImaginaryResidue):
            p.apply_inverse(rng.standard_normal(system.size))


class TestRoundTrip:
    def test_small_residual(self, nsd_system, rng):
        p = precond.build(0.1, nsd_system)
        assert precond.residual_check_roundtrip(p, rng.standard_normal(nsd_system.size)) < 1e-10

    def test_zero_vector(self, nsd_system):
        p = precond.build(0.1, nsd_system)
        assert p.residual_check_roundtrip(np.zeros(nsd_system.size)) == 0.0

    def test_module_apply(self, nsd_system, rng):
        p = precond.build(0.1, nsd_system)
        v = rng.standard_normal(nsd_system.size)
        assert_array_equal(precond.apply_inverse(p, v), p.apply_inverse(v))


class TestSingularity:
    def test_zero_operator(self):
        system = aao.from_a_tilde(np.zeros((3, 3)), 4)
        with pytest.raises(SingularPreconditioner) as info:
            AlphaPreconditioner.build(1.0, system)
        assert info.value.k == 1
        assert info.value.lambda1 == 0.0

    @pytest.mark.parametrize("name", ["set3", "set4"])
    def test_plain_circulant_singular_for_sabr(self, name):
        _, system = load_preset(name).assemble(8)
        with pytest.raises(SingularPreconditioner) as info:
            AlphaPreconditioner.build(1.0, system)
        assert info.value.k == 1
        AlphaPreconditioner.build(1e-3, system)

    def test_alpha_range(self, nsd_system):
        with pytest.raises(ParameterError):
            AlphaPreconditioner.build(0.0, nsd_system)
