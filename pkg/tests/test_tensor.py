import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from novi import tensor as T
from novi.errors import DimensionError, InputError, NumericalError
from novi.tensor import _fallback

try:
    from novi.tensor import _core
except ImportError:  # extension not built
    _core = None


def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def loop_sqdist(x, z):
    out = np.zeros((x.shape[0], z.shape[0]))
    for i in range(x.shape[0]):
        for j in range(z.shape[0]):
            out[i, j] = sum((x[i, k] - z[j, k]) ** 2 for k in range(x.shape[1]))
    return out


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(np.eye(2), a), a)

    def test_hand_expansion(self):
        assert T.matmul([[1.0, 2.0]], [[3.0], [4.0]]).tolist() == [[11.0]]

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        np.testing.assert_allclose(T.matmul(a, b), loop_matmul(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 10**6))
    def test_associativity(self, m, k, n, p, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.standard_normal((m, k)), rng.standard_normal((k, n)), rng.standard_normal((n, p))
        left = T.matmul(a, T.matmul(b, c))
        right = T.matmul(T.matmul(a, b), c)
        scale = np.abs(a) @ np.abs(b) @ np.abs(c)
        assert np.all(np.abs(left - right) <= 1e-10 * np.maximum(scale, 1.0))


class TestCholesky:
    def test_identity(self):
        f = T.cholesky(np.eye(3), base_jitter=1e-8)
        np.testing.assert_allclose(f.lower, np.eye(3), atol=1e-8)
        assert f.jitter_used == 1e-8

    def test_closed_form_2x2(self):
        f = T.cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]), base_jitter=0.0)
        np.testing.assert_allclose(f.lower, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)

    def test_indefinite_raises_with_final_jitter(self):
        with pytest.raises(NumericalError, match="final jitter tried = 0.01"):
            T.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), max_jitter=1e-2)

    def test_non_symmetric(self):
        with pytest.raises(InputError):
            T.cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_not_square(self):
        with pytest.raises(DimensionError):
            T.cholesky(np.ones((2, 3)))

    def test_jitter_escalates(self):
        # singular PSD matrix: needs some jitter but factors below the cap
        v = np.array([1.0, 2.0, 3.0])
        f = T.cholesky(np.outer(v, v), base_jitter=0.0)
        assert f.jitter_used > 0
        assert np.all(np.diag(f.lower) > 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 10**6))
    def test_reconstruction(self, n, seed):
        a = random_spd(np.random.default_rng(seed), n)
        f = T.cholesky(a)
        err = np.linalg.norm(f.lower @ f.lower.T - (a + f.jitter_used * np.eye(n)))
        assert err <= 1e-8 * np.linalg.norm(a)
        assert np.all(np.diag(f.lower) > 0)
        assert np.all(np.triu(f.lower, 1) == 0)

    def test_logdet(self):
        a = random_spd(np.random.default_rng(3), 5)
        f = T.cholesky(a, base_jitter=0.0)
        assert abs(f.logdet() - np.linalg.slogdet(a)[1]) < 1e-10


class TestTriSolve:
    def test_identity_factor(self):
        f = T.cholesky(np.eye(4), base_jitter=0.0)
        b = np.arange(4.0)
        np.testing.assert_array_equal(T.tri_solve(f, b), b)

    def test_forward_substitution(self):
        lower = np.array([[2.0, 0.0], [1.0, math.sqrt(2.0)]])
        x = T.tri_solve(T.CholeskyFactor(lower, 0.0), np.array([2.0, 1.0 + math.sqrt(2.0)]))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-15)

    def test_both_sides_vs_inverse(self):
        rng = np.random.default_rng(1)
        a = random_spd(rng, 6)
        b = rng.standard_normal((6, 3))
        f = T.cholesky(a, base_jitter=0.0)
        x = T.tri_solve(f, T.tri_solve(f, b, "lower"), "upper")
        ref = np.linalg.inv(a) @ b
        assert np.linalg.norm(x - ref) <= 1e-9 * np.linalg.norm(ref)
        np.testing.assert_allclose(T.cho_solve(f, b), x, atol=1e-14)

    def test_upper_solves_transpose(self):
        rng = np.random.default_rng(2)
        f = T.cholesky(random_spd(rng, 5), base_jitter=0.0)
        b = rng.standard_normal(5)
        np.testing.assert_allclose(f.lower.T @ T.tri_solve(f, b, "upper"), b, atol=1e-12)

    def test_shape_mismatch(self):
        f = T.cholesky(np.eye(3))
        with pytest.raises(DimensionError):
            T.tri_solve(f, np.ones(4))

    def test_bad_side(self):
        with pytest.raises(InputError):
            T.tri_solve(T.cholesky(np.eye(2)), np.ones(2), "left")


class TestPairwiseSqdist:
    def test_zero_diagonal(self):
        x = np.random.default_rng(0).standard_normal((6, 3))
        np.testing.assert_array_equal(np.diag(T.pairwise_sqdist(x, x)), np.zeros(6))

    def test_hand_arithmetic(self):
        assert T.pairwise_sqdist([[0.0]], [[3.0]])[0, 0] == 9.0

    def test_loop_oracle(self):
        rng = np.random.default_rng(4)
        x, z = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
        np.testing.assert_allclose(T.pairwise_sqdist(x, z), loop_sqdist(x, z), rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            T.pairwise_sqdist(np.ones((2, 3)), np.ones((2, 4)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 6), st.integers(0, 10**6))
    def test_swap_symmetry_and_sign(self, n, m, d, seed):
        rng = np.random.default_rng(seed)
        x, z = rng.standard_normal((n, d)), rng.standard_normal((m, d))
        a = T.pairwise_sqdist(x, z)
        np.testing.assert_array_equal(a, T.pairwise_sqdist(z, x).T)
        assert np.all(a >= 0)


@pytest.mark.skipif(_core is None, reason="compiled core not built")
class TestBackendsAgree:
    def test_sqdist(self):
        rng = np.random.default_rng(5)
        x, z = rng.standard_normal((30, 7)), rng.standard_normal((20, 7))
        np.testing.assert_allclose(_core.pairwise_sqdist(x, z), _fallback.pairwise_sqdist(x, z), atol=1e-12)

    def test_potrf(self):
        a = random_spd(np.random.default_rng(6), 12)
        np.testing.assert_allclose(_core.potrf_lower(a), _fallback.potrf_lower(a), atol=1e-12)
        assert _core.potrf_lower(-np.eye(3)) is None
        assert _fallback.potrf_lower(-np.eye(3)) is None

    @pytest.mark.parametrize("transpose", [False, True])
    def test_trsm(self, transpose):
        rng = np.random.default_rng(7)
        lower = np.linalg.cholesky(random_spd(rng, 9))
        b = rng.standard_normal((9, 4))
        np.testing.assert_allclose(_core.trsm(lower, b, transpose), _fallback.trsm(lower, b, transpose), atol=1e-12)


def test_backend_name():
    assert T.BACKEND in ("cython", "python")
