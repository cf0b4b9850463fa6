import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genfinder.branch import (BranchFamily, LindbladConditions, Verdict, build_branch_family,
                              check_conditions, classify_margin, decide_markovian,
                              decompose_lindblad, fit_generator_series, lindblad_generator,
                              sample_lindblad, traceless_basis)
from genfinder.channel import SnapshotSeries, TransferMatrix, lift_stochastic, omega_vector
from genfinder.errors import InconsistentSeries, InvalidSnapshot, LogUndefined, NotLindblad
from genfinder.matkernel import flip_op, gamma_reshuffle, mat_exp

seeds = st.integers(0, 2**31 - 1)


def negative_lift():
    T = np.array([[0.1, 0.9], [0.9, 0.1]])
    return lift_stochastic(T, math.sqrt(0.01) / 2)


def ccp_violation(d, rng):
    """Hermitian-preserving, trace-free perturbation whose Choi block is
    negative definite off omega: minus a dephasing-like dissipator."""
    F = traceless_basis(d)
    a = rng.integers(len(F))
    G = np.zeros((len(F), len(F)))
    G[a, a] = 1.0
    return lindblad_generator(np.zeros((d, d)), G)


class TestBasis:
    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_orthonormal_traceless_hermitian(self, d):
        F = np.array(traceless_basis(d))
        assert len(F) == d * d - 1
        gram = np.einsum("aij,bij->ab", F.conj(), F)
        assert np.allclose(gram, np.eye(d * d - 1))
        assert np.allclose(np.trace(F, axis1=1, axis2=2), 0)
        assert np.allclose(F, F.conj().transpose(0, 2, 1))


class TestSampler:
    def test_deterministic(self):
        assert sample_lindblad(2, 42).tobytes() == sample_lindblad(2, 42).tobytes()

    @given(seeds, st.sampled_from([2, 3, 4]))
    def test_passes_conditions(self, seed, d):
        c = check_conditions(sample_lindblad(d, seed))
        assert c.hermiticity_residual <= 1e-10 and c.normalization_residual <= 1e-10
        assert c.ccp_margin >= -1e-10

    def test_hamiltonian_only(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        L = lindblad_generator(X + X.conj().T, np.zeros((8, 8)))
        c = check_conditions(L)
        assert abs(c.ccp_margin) <= 1e-12
        assert sample_lindblad(3, 5, dissipation_scale=0.0).shape == (9, 9)
        assert abs(check_conditions(sample_lindblad(3, 5, dissipation_scale=0.0)).ccp_margin) <= 1e-12

    def test_matches_direct_action(self):
        rng = np.random.default_rng(2)
        d = 3
        H = np.diag([0.0, 1.0, -0.5])
        F = traceless_basis(d)
        W = rng.normal(size=(8, 8))
        G = W @ W.T
        L = lindblad_generator(H, G, F)
        rho = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        direct = 1j * (rho @ H - H @ rho)
        for a in range(8):
            for b in range(8):
                FbFa = F[b].conj().T @ F[a]
                direct += G[a, b] * (F[a] @ rho @ F[b].conj().T - 0.5 * (FbFa @ rho + rho @ FbFa))
        assert np.allclose((L @ rho.reshape(-1)).reshape(d, d), direct)

    def test_small_d_rejected(self):
        with pytest.raises(ValueError):
            sample_lindblad(1, 0)


class TestConditions:
    def test_zero(self):
        c = check_conditions(np.zeros((4, 4)))
        assert c == LindbladConditions(0.0, 0.0, 0.0)
        assert c.verdict(1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_perturbation_flips_ccp(self, seed):
        rng = np.random.default_rng(seed)
        L = sample_lindblad(3, seed)
        bad = L - 0.1 * ccp_violation(3, rng) * 50
        c = check_conditions(bad)
        assert c.hermiticity_residual <= 1e-10 and c.normalization_residual <= 1e-10
        assert c.ccp_margin < 0

    def test_non_hp_generator(self):
        L = sample_lindblad(2, 0) + 1j * np.eye(4)
        assert check_conditions(L).hermiticity_residual > 0.1

    @pytest.mark.parametrize("margin, band", [(0.0, "feasible"), (-1e-9, "feasible"),
                                              (-5e-8, "gray"), (-1e-6, "infeasible")])
    def test_bands(self, margin, band):
        assert classify_margin(margin, 1e-8) == band


class TestBranchFamily:
    def test_real_spectrum_no_shifts(self):
        E = lift_stochastic(np.array([[0.9, 0.2], [0.1, 0.8]]), 0.5)
        fam = build_branch_family(E)
        assert len(fam) == 0
        assert np.allclose(mat_exp(fam.L0), E.matrix, atol=1e-12)

    def test_one_pair_for_qubit(self):
        L = sample_lindblad(2, 3)
        E = mat_exp(L)
        fam = build_branch_family(E)
        assert len(fam) == 1
        for m in (-2, -1, 1, 2):
            assert np.linalg.norm(mat_exp(fam.branch((m,))) - E) <= 1e-8

    def test_negative_eigenvalue(self):
        with pytest.raises(LogUndefined) as exc:
            build_branch_family(negative_lift())
        assert exc.value.lone

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_branch_invariants(self, seed, d):
        E = mat_exp(sample_lindblad(d, 100 * d + seed))
        fam = build_branch_family(E)
        w = omega_vector(d)
        for A in fam.shifts:
            assert np.linalg.norm(w @ A) <= 1e-9
            assert np.allclose(flip_op(A), A, atol=1e-12)
            vals = np.linalg.eigvals(A)
            near = np.min(np.abs(vals[:, None] - np.array([0, 2j * np.pi, -2j * np.pi])[None]), axis=1)
            assert near.max() <= 1e-8
        rng = np.random.default_rng(seed)
        for _ in range(3):
            m = rng.integers(-2, 3, size=len(fam))
            Lm = fam.branch(m)
            C = gamma_reshuffle(Lm)
            assert np.linalg.norm(C - C.conj().T) <= 1e-9
            assert np.linalg.norm(mat_exp(Lm) - E) <= 1e-7 * np.linalg.norm(E)

    def test_branch_length_checked(self):
        fam = BranchFamily(2, np.zeros((4, 4)), (np.zeros((4, 4)),))
        with pytest.raises(ValueError):
            fam.branch((1, 2))


class TestDecide:
    def test_identity(self):
        r = decide_markovian(TransferMatrix.identity(2))
        assert r.verdict is Verdict.MARKOVIAN
        assert np.allclose(r.witness_L, 0)

    @pytest.mark.parametrize("seed", range(12))
    @pytest.mark.parametrize("d", [2, 3])
    def test_round_trip(self, seed, d):
        E = mat_exp(sample_lindblad(d, seed))
        r = decide_markovian(E)
        assert r.verdict is Verdict.MARKOVIAN
        assert np.linalg.norm(mat_exp(r.witness_L) - E) <= 1e-7
        assert check_conditions(r.witness_L).verdict(1e-8)

    def test_negative_eigenvalue_is_non_markovian_with_cause(self):
        r = decide_markovian(negative_lift())
        assert r.verdict is Verdict.NON_MARKOVIAN
        assert "LogUndefined" in r.cause

    def test_non_principal_witness(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(8, 8))
        L = lindblad_generator(np.diag([0, 2.3, 5.9]), 0.02 * W @ W.T)
        r = decide_markovian(mat_exp(L))
        assert r.verdict is Verdict.MARKOVIAN
        assert any(r.witness_m)
        assert np.allclose(r.witness_L, L, atol=1e-10)

    def test_lexicographic_first(self):
        # pure Hamiltonian: several branches are valid; the most negative wins
        H = np.diag([0.0, 0.4])
        L = lindblad_generator(H, np.zeros((3, 3)))
        r = decide_markovian(mat_exp(L), branch_bound=2)
        assert r.verdict is Verdict.MARKOVIAN
        assert r.witness_m == (-2,)

    # lifted chain T: rates a', b' force coherences to decay at least at
    # (a' + b') / 2, i.e. coherence <= exp(-(a' + b') / 2) ~= 0.8367, while
    # complete positivity only needs coherence <= sqrt(0.9 * 0.8) ~= 0.8485
    T_CHAIN = np.array([[0.9, 0.2], [0.1, 0.8]])

    def test_slow_dephasing_is_non_markovian(self):
        E = lift_stochastic(self.T_CHAIN, 0.845)
        r = decide_markovian(E)
        assert r.verdict is Verdict.NON_MARKOVIAN
        assert "searched branch box" in r.note
        assert r.conditions.ccp_margin < -1e-4

    def test_fast_dephasing_is_markovian(self):
        r = decide_markovian(lift_stochastic(self.T_CHAIN, 0.83))
        assert r.verdict is Verdict.MARKOVIAN

    def test_gray_band_is_indeterminate(self):
        tol = 1e-4

        def margin(c):
            return check_conditions(build_branch_family(lift_stochastic(self.T_CHAIN, c)).L0).margin

        lo, hi = 0.83, 0.845          # margin(lo) >= 0 > margin(hi)
        for _ in range(60):
            mid = (lo + hi) / 2
            if margin(mid) > -3 * tol:
                lo = mid
            else:
                hi = mid
        r = decide_markovian(lift_stochastic(self.T_CHAIN, lo), tol=tol)
        assert -10 * tol < r.conditions.margin <= -tol
        assert r.verdict is Verdict.INDETERMINATE

    def test_rejects_non_cpt(self):
        with pytest.raises(InvalidSnapshot):
            decide_markovian(2 * np.eye(4))

    def test_report_dict(self):
        r = decide_markovian(TransferMatrix.identity(2))
        d = r.as_dict()
        assert d["verdict"] == "markovian" and d["witness_m"] == []


class TestDecompose:
    def test_zero(self):
        dec = decompose_lindblad(np.zeros((4, 4)))
        assert np.allclose(dec.H, 0) and np.allclose(dec.G, 0)

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("d", [2, 3])
    def test_reassembly(self, seed, d):
        L = sample_lindblad(d, seed)
        dec = decompose_lindblad(L)
        assert dec.reassembly_residual <= 1e-8
        assert np.allclose(dec.H, dec.H.conj().T)
        assert np.linalg.eigvalsh(dec.G).min() >= -1e-10
        assert np.allclose(dec.generator(), L, atol=1e-10)

    def test_hamiltonian_only(self):
        H = np.array([[1.0, 0.5 - 0.2j], [0.5 + 0.2j, -1.0]])
        dec = decompose_lindblad(lindblad_generator(H, np.zeros((3, 3))))
        assert np.linalg.norm(dec.G) <= 1e-8
        assert np.allclose(dec.H, H)

    def test_rejects_invalid(self):
        with pytest.raises(NotLindblad):
            decompose_lindblad(sample_lindblad(2, 0) - 5 * lindblad_generator(np.zeros((2, 2)), np.eye(3)))


def _series(Ls, times):
    return SnapshotSeries(tuple(times), tuple(TransferMatrix.from_matrix(mat_exp(t * L))
                                              for t, L in zip(times, Ls)))


class TestFit:
    @pytest.mark.parametrize("seed", range(5))
    def test_recovers_generator(self, seed):
        L = sample_lindblad(2, seed)
        r = fit_generator_series(_series([L] * 3, (1, 2, 3)))
        assert r.verdict is Verdict.MARKOVIAN
        assert np.linalg.norm(r.witness_L - L) <= 1e-6
        assert len(r.series_residuals) == 3 and max(r.series_residuals) <= 1e-8

    def test_single_snapshot_matches_decide(self):
        L = sample_lindblad(3, 2)
        r1 = fit_generator_series(_series([L], (1.0,)))
        r2 = decide_markovian(mat_exp(L))
        assert r1.verdict is r2.verdict and r1.witness_m == r2.witness_m

    def test_mixed_generators_rejected(self):
        La, Lb = sample_lindblad(2, 1), sample_lindblad(2, 2)
        r = fit_generator_series(_series([La, Lb], (1, 2)), tol=1e-6)
        assert r.verdict is Verdict.NON_MARKOVIAN
        assert max(r.series_residuals) > 1e-6

    def test_classical_series_rejected(self):
        from genfinder.channel import StochasticMatrix
        T = StochasticMatrix.from_matrix(np.eye(2))
        with pytest.raises(InconsistentSeries):
            fit_generator_series(SnapshotSeries((1.0,), (T,)))
