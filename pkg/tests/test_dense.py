import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from krylov.dense import (EPS, NotPositiveDefinite, SingularFactor, as_dense, cholesky, cond,
                          gram, householder_qr, mat_mul, ortho_error, singular_values,
                          sym_eigenvalues, tri_solve_right)
from krylov.matgen import gen_logscaled


def _loop_product(A, B):
    out = np.zeros((A.shape[0], B.shape[1]))
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            acc = 0.0
            for k in range(A.shape[1]):
                acc += A[i, k] * B[k, j]
            out[i, j] = acc
    return out


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def tall(max_rows=30, max_cols=6):
    return st.integers(1, max_cols).flatmap(
        lambda c: st.integers(c, max_rows).flatmap(
            lambda r: hnp.arrays(np.float64, (r, c), elements=finite)))


class TestGram:
    def test_identity_columns(self):
        assert np.array_equal(gram(np.eye(5)[:, :3]), np.eye(3))

    def test_single_column(self):
        assert gram(np.array([[3.0], [4.0]])).tolist() == [[25.0]]

    def test_triple_loop_oracle(self):
        V = np.random.default_rng(1).standard_normal((50, 4))
        G = gram(V)
        ref = _loop_product(V.T, V)
        assert np.max(np.abs(G - ref) / np.abs(ref).max()) < 1e-15

    @given(tall())
    def test_bitwise_symmetric(self, V):
        G = gram(V)
        assert np.array_equal(G, G.T)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            gram(np.zeros((3, 0)))


class TestMatMul:
    def test_identity_and_row(self):
        A = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(mat_mul(A, np.eye(4)), A)
        assert np.array_equal(mat_mul(np.eye(3)[:, :1], A, trans_a=True)[0], A[0])

    def test_loop_oracle(self):
        rng = np.random.default_rng(2)
        A, B = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
        ref = _loop_product(A, B)
        assert np.max(np.abs(mat_mul(A, B) - ref)) <= 1e-15 * np.abs(ref).max() * 5
        assert np.allclose(mat_mul(B, A, trans_a=True, trans_b=True), ref.T, rtol=0, atol=1e-14)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            mat_mul(np.ones((2, 3)), np.ones((2, 3)))


class TestCholesky:
    def test_identity(self):
        assert np.array_equal(cholesky(np.eye(4)), np.eye(4))

    def test_hand_example(self):
        R = cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
        assert R.tolist() == [[2.0, 1.0], [0.0, 2.0]]
        assert (R.T @ R).tolist() == [[4.0, 2.0], [2.0, 5.0]]

    def test_indefinite_reports_pivot(self):
        with pytest.raises(NotPositiveDefinite) as err:
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert err.value.pivot == 2

    def test_zero_pivot_is_breakdown(self):
        with pytest.raises(NotPositiveDefinite) as err:
            cholesky(np.zeros((3, 3)))
        assert err.value.pivot == 1

    @given(tall(40, 6))
    def test_reconstruction(self, V):
        S = V.T @ V + np.eye(V.shape[1])
        R = cholesky(S)
        assert np.array_equal(R, np.triu(R))
        assert np.all(np.diag(R) > 0)
        assert np.linalg.norm(R.T @ R - S) <= 100 * S.shape[0] * EPS * np.linalg.norm(S)


class TestTriSolve:
    def test_identity_and_scaled(self):
        V = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(tri_solve_right(V, np.eye(2)), V)
        assert np.array_equal(tri_solve_right(V, 2 * np.eye(2)), V / 2)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        V = rng.standard_normal((40, 5))
        R = np.triu(rng.standard_normal((5, 5))) + 5 * np.eye(5)
        W = tri_solve_right(V @ R, R)
        assert np.linalg.norm(W - V) <= 1e-13 * np.linalg.norm(V)

    def test_zero_diagonal(self):
        with pytest.raises(SingularFactor):
            tri_solve_right(np.ones((3, 2)), np.array([[1.0, 1.0], [0.0, 0.0]]))

    def test_input_untouched(self):
        V = np.asfortranarray(np.ones((4, 2)))
        tri_solve_right(V, 2 * np.eye(2))
        assert np.all(V == 1.0)


class TestHouseholder:
    def test_orthonormal_input(self):
        Q0, _ = householder_qr(np.random.default_rng(4).standard_normal((30, 4)))
        _, R = householder_qr(Q0)
        assert np.allclose(R, np.eye(4), rtol=0, atol=1e-14)

    def test_single_column(self):
        Q, R = householder_qr(np.array([[3.0], [4.0]]))
        assert np.allclose(Q.ravel(), [0.6, 0.8], atol=1e-15)
        assert np.isclose(R[0, 0], 5.0, rtol=1e-15)

    @given(tall(40, 6))
    def test_factorization(self, V):
        Q, R = householder_qr(V)
        assert np.all(np.diag(R) >= 0)
        assert np.array_equal(R, np.triu(R))
        scale = max(np.linalg.norm(V), 1.0)
        assert np.linalg.norm(V - Q @ R) <= 100 * V.shape[0] * EPS * scale

    def test_unconditional_orthogonality(self):
        V = gen_logscaled(2000, 5, 1e12, 0).matrix
        Q, _ = householder_qr(V)
        assert ortho_error(Q) < 1e-13

    def test_wide_rejected(self):
        with pytest.raises(ValueError):
            householder_qr(np.ones((2, 3)))


class TestSingularValues:
    def test_identity(self):
        s = singular_values(np.eye(6)[:, :4])
        assert np.allclose(s.singular_values, 1.0, rtol=0, atol=1e-15)
        assert s.cond == pytest.approx(1.0, abs=1e-14)

    def test_duplicate_column(self):
        v = np.array([1.0, 2.0, 3.0, 4.0])
        s = singular_values(np.column_stack([v, v]))
        assert s.singular_values[0] == pytest.approx(np.sqrt(2) * np.linalg.norm(v), rel=1e-14)
        assert s.singular_values[1] == 0.0
        assert s.cond == np.inf

    @given(tall(30, 6))
    @settings(max_examples=40)
    def test_matches_lapack_on_benign_input(self, V):
        ref = np.linalg.svd(V, compute_uv=False)
        s = singular_values(V)
        assert np.all(np.diff(s.singular_values) <= 0)
        assert np.allclose(s.singular_values, ref, rtol=0, atol=1e-12 * max(ref[0], 1.0))
        assert s.cond >= 1

    def test_planted_kappa_1e10(self):
        panel = gen_logscaled(100_000, 5, 1e10, 3)
        s = singular_values(panel.matrix)
        rel = np.abs(s.singular_values - panel.planted) / panel.planted
        assert rel.max() < 1e-8
        assert abs(s.cond / 1e10 - 1) < 0.01

    @pytest.mark.xfail(strict=True, reason="forming V = X S Y^T in binary64 perturbs the "
                       "smallest singular value by ~eps*smax/smin, about 1e-7 relative at 1e12")
    def test_planted_kappa_1e12(self):
        panel = gen_logscaled(100_000, 5, 1e12, 3)
        s = singular_values(panel.matrix)
        rel = np.abs(s.singular_values - panel.planted) / panel.planted
        assert rel.max() < 1e-8

    def test_cond_helper(self):
        assert cond(np.diag([4.0, 2.0])) == pytest.approx(2.0, rel=1e-15)

    def test_shape_limits(self):
        with pytest.raises(ValueError):
            singular_values(np.ones((2, 3)))


class TestOrthoError:
    def test_identity(self):
        assert ortho_error(np.eye(5)[:, :3]) == 0.0

    def test_duplicated_unit_vector(self):
        e1 = np.eye(3)[:, 0]
        assert ortho_error(np.column_stack([e1, e1])) == pytest.approx(1.0, abs=1e-15)

    def test_scaled_unit_vector(self):
        assert ortho_error(2 * np.eye(3)[:, :1]) == 3.0

    @given(tall(30, 6), st.randoms(use_true_random=False))
    @settings(max_examples=40)
    def test_permutation_invariant_and_matches_eigh(self, V, rnd):
        perm = list(range(V.shape[1]))
        rnd.shuffle(perm)
        e = ortho_error(V)
        ref = np.max(np.abs(np.linalg.eigvalsh(np.eye(V.shape[1]) - V.T @ V)))
        assert e == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert ortho_error(V[:, perm]) == pytest.approx(e, rel=1e-12, abs=1e-12)

    def test_sym_eigenvalues(self):
        S = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert np.allclose(sym_eigenvalues(S), [1.0, 3.0], atol=1e-15)


class TestCholQRBound:
    # cholesky + trsm error bound with c1 = 5(n s + s(s+1)) eps, slack 10
    @pytest.mark.parametrize("kappa", [1e1, 1e2, 1e3, 1e4])
    def test_first_pass_bound(self, kappa):
        n, s = 20_000, 5
        c1 = 5 * (n * s + s * (s + 1)) * EPS
        assert kappa ** 2 * c1 < 0.5
        V = gen_logscaled(n, s, kappa, 11).matrix
        Q = tri_solve_right(V, cholesky(gram(V)))
        assert ortho_error(Q) <= 10 * c1 * kappa ** 2


def test_as_dense_validation():
    assert as_dense([1.0, 2.0]).shape == (2, 1)
    assert as_dense(np.ones((2, 2))).flags.f_contiguous
    with pytest.raises(ValueError):
        as_dense([[np.nan]])
