import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from genfinder.errors import DegenerateSpectrum, LogUndefined, NotHermitian, NotSquareOfSquare, Overflow
from genfinder.matkernel import (EXP_NORM_CAP, eig_decompose, flip_op, gamma_reshuffle,
                                 mat_exp, mat_log_principal, min_eig_hermitian, psd_check)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def truncated_series_exp(M, terms=80):
    """Independent oracle: partial sums of the exponential series."""
    out = np.eye(M.shape[0], dtype=complex)
    term = np.eye(M.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def random_complex(rng, n):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


class TestEig:
    def test_identity_is_degenerate(self):
        with pytest.raises(DegenerateSpectrum):
            eig_decompose(np.eye(2), 1e-8)

    def test_diagonal(self):
        es = eig_decompose(np.diag([2, 3j]), 1e-8)
        order = np.argsort(np.abs(es.eigenvalues))
        assert np.allclose(es.eigenvalues[order], [2, 3j])
        R = es.right[:, order]
        assert np.allclose(np.abs(R), np.eye(2))

    @pytest.mark.parametrize("n", [4, 9, 16, 20])
    def test_random_reconstruction(self, rng, n):
        M = random_complex(rng, n)
        es = eig_decompose(M, 1e-8)
        assert es.reconstruction_residual <= 1e-10 * max(1, np.linalg.norm(M))
        assert es.biorthogonality_residual <= 1e-10
        assert np.allclose(es.left @ es.right, np.eye(n), atol=1e-10)
        assert np.linalg.norm(es.reconstruct() - M) <= 1e-10 * np.linalg.norm(M)


class TestExp:
    def test_zero(self):
        assert np.array_equal(mat_exp(np.zeros((3, 3))), np.eye(3))

    def test_diag_log2(self):
        assert np.allclose(mat_exp(np.diag([math.log(2), 0])), np.diag([2, 1]), atol=1e-15)

    def test_full_rotation_against_series(self):
        M = np.array([[0, 2 * np.pi], [-2 * np.pi, 0]])
        assert np.allclose(mat_exp(M), np.eye(2), atol=1e-12)
        assert np.allclose(truncated_series_exp(M), np.eye(2), atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_series(self, seed):
        M = random_complex(np.random.default_rng(seed), 5) * 0.5
        assert np.allclose(mat_exp(M), truncated_series_exp(M), atol=1e-11)

    def test_overflow(self):
        with pytest.raises(Overflow):
            mat_exp(np.diag([10 * EXP_NORM_CAP, 0.0]))

    def test_sparse_blocks_match_dense(self, rng):
        A = random_complex(rng, 3)
        B = random_complex(rng, 2)
        M = scipy.linalg.block_diag(A, B, np.array([[0.3]]))
        perm = rng.permutation(6)
        M = M[perm][:, perm]
        out = mat_exp(sp.csr_array(M))
        assert sp.issparse(out)
        assert np.allclose(out.toarray(), scipy.linalg.expm(M), atol=1e-12)


class TestLog:
    def test_near_identity(self):
        L = mat_log_principal(np.diag([1.1, 0.9]), 1e-8)
        assert np.allclose(L, np.diag([math.log(1.1), math.log(0.9)]))

    def test_negative_eigenvalue(self):
        with pytest.raises(LogUndefined) as exc:
            mat_log_principal(np.diag([0.5, -0.8]), 1e-8)
        assert exc.value.lone

    def test_zero_eigenvalue(self):
        with pytest.raises(LogUndefined):
            mat_log_principal(np.diag([0.5, 0.0]), 1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_stochastic_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.uniform(size=(3, 3)) + 3 * np.eye(3)
        M /= M.sum(axis=0)
        L = mat_log_principal(M, 1e-8)
        assert np.isrealobj(L)
        assert np.allclose(mat_exp(L), M, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_eig_and_schur_paths_agree(self, seed):
        rng = np.random.default_rng(seed)
        M = random_complex(rng, 4) * 0.3 + 2 * np.eye(4)
        a = mat_log_principal(M, 1e-8, method="eig")
        b = mat_log_principal(M, 1e-8, method="schur")
        assert np.allclose(a, b, atol=1e-9)
        assert np.allclose(a, scipy.linalg.logm(M), atol=1e-9)

    def test_principal_strip(self, rng):
        M = random_complex(rng, 4) + 3 * np.eye(4)
        vals = np.linalg.eigvals(mat_log_principal(M))
        assert np.all(vals.imag > -np.pi) and np.all(vals.imag <= np.pi)

    @given(hnp.arrays(np.float64, (3, 3), elements=st.floats(-0.3, 0.3)))
    def test_round_trip_property(self, X):
        M = np.eye(3) + X
        try:
            L = mat_log_principal(M, 1e-8)
        except (LogUndefined, DegenerateSpectrum):
            return
        assert np.linalg.norm(mat_exp(L) - M) <= 1e-8 * max(1, np.linalg.norm(M))


def basis(d, i, j, k, l):
    M = np.zeros((d * d, d * d))
    M[i * d + j, k * d + l] = 1
    return M


class TestReshuffles:
    def test_gamma_basis_element(self):
        # |0,0><1,1| -> |0,1><0,1|
        assert np.array_equal(gamma_reshuffle(basis(2, 0, 0, 1, 1)), basis(2, 0, 1, 0, 1))

    def test_gamma_identity_channel(self):
        d = 3
        w = np.zeros(d * d)
        w[np.arange(d) * (d + 1)] = 1
        assert np.array_equal(gamma_reshuffle(np.eye(d * d)), np.outer(w, w))

    def test_flip_real_diagonal(self):
        d = 2
        M = np.diag(np.arange(1.0, 5.0))
        F = flip_op(M)
        perm = [0, 2, 1, 3]   # (i,j) -> (j,i)
        assert np.array_equal(np.diag(F), np.diag(M)[perm])

    def test_not_square_of_square(self):
        with pytest.raises(NotSquareOfSquare):
            gamma_reshuffle(np.eye(3))
        with pytest.raises(NotSquareOfSquare):
            flip_op(np.eye(5))

    @given(hnp.arrays(np.float64, (2, 9, 9), elements=finite), finite, finite)
    def test_involutions_and_linearity(self, XY, a, b):
        X = XY[0] + 1j * XY[1]
        Y = XY[1] - 2j * XY[0]
        assert np.array_equal(gamma_reshuffle(gamma_reshuffle(X)), X)
        assert np.array_equal(flip_op(flip_op(X)), X)
        lhs = gamma_reshuffle(a * X + b * Y)
        assert np.allclose(lhs, a * gamma_reshuffle(X) + b * gamma_reshuffle(Y))

    def test_sparse_matches_dense(self, rng):
        M = random_complex(rng, 9)
        M[np.abs(M) < 1] = 0
        for f in (gamma_reshuffle, flip_op):
            assert np.allclose(f(sp.csr_array(M)).toarray(), f(M))


class TestPsd:
    def test_diag_examples(self):
        r = psd_check(np.diag([2.0, 0.0]), 1e-8)
        assert r.positive and r.margin == 0
        r = psd_check(np.diag([2.0, -1.0]), 1e-8)
        assert not r.positive and r.margin == pytest.approx(-1)

    def test_projector(self):
        w = np.ones(3) / math.sqrt(3)
        r = psd_check(np.eye(3) - np.outer(w, w), 1e-8)
        assert r.positive and abs(r.margin) < 1e-12

    def test_not_hermitian(self):
        with pytest.raises(NotHermitian):
            psd_check(np.array([[0, 1], [0, 0.0]]), 1e-8)

    def test_projected_min_eig_blockwise(self, rng):
        n = 300
        H = sp.diags(rng.uniform(1, 2, size=n)).tocsr().tolil()
        w = np.zeros(n)
        w[[0, 5, 7]] = 1 / math.sqrt(3)
        H[0, 5] = H[5, 0] = -0.7
        H = H.tocsr()
        dense = H.toarray()
        P = np.eye(n) - np.outer(w, w)
        ref = np.linalg.eigvalsh(P @ dense @ P)
        # the projected matrix has eigenvalue 0 along w plus the rest
        assert min_eig_hermitian(H, project=w) == pytest.approx(ref[0], abs=1e-10)
