"""Markovianity of quantum snapshots: logarithm branches and Lindblad conditions.

A snapshot E is Markovian when some branch ``L_m = L0 + sum_c m_c A_c`` of
``log E`` satisfies, in the transfer convention of :mod:`genfinder.matkernel`,

(i)   ``Gamma(L)`` is Hermitian,
(ii)  ``<omega| L = 0``,
(iii) ``(1 - omega) Gamma(L) (1 - omega) >= 0``  (conditional complete positivity).

Branches are enumerated over an integer box in lexicographic order (most
negative first) and the first feasible one is the canonical witness.  Every
verdict uses the weak-membership bands of :func:`classify_margin`.
"""
from dataclasses import dataclass, field
import enum
import itertools
import math

import numpy as np
import scipy.sparse as sp

from .channel import SnapshotSeries, TransferMatrix, omega_vector, validate_cpt
from .errors import (DegenerateSpectrum, InconsistentSeries, InvalidSnapshot, LogUndefined,
                     NonDiagonalizable, NotLindblad)
from .matkernel import (DEFAULT_TOL, _log_domain_check, eig_decompose, flip_op, frob,
                        gamma_reshuffle, hermitian_part, hilbert_dim, mat_exp, min_eig_hermitian,
                        to_dense)

DEFAULT_BRANCH_BOUND = 2
GRAY_FACTOR = 10
# stacked (batched eigvalsh) evaluation is used up to this transfer-matrix size
_STACK_MAX_DIM = 400
_STACK_BYTES = 1 << 26


class Verdict(str, enum.Enum):
    MARKOVIAN = "markovian"
    NON_MARKOVIAN = "non-markovian"
    INDETERMINATE = "indeterminate"


def classify_margin(margin, tol):
    """Weak-membership band: 'feasible', 'gray' or 'infeasible'."""
    if margin >= -tol:
        return "feasible"
    if margin > -GRAY_FACTOR * tol:
        return "gray"
    return "infeasible"


@dataclass(frozen=True)
class LindbladConditions:
    hermiticity_residual: float
    normalization_residual: float
    ccp_margin: float
    # False when ccp_margin is only the diagonal upper bound used to prune a
    # clearly infeasible branch (the true margin is at most this value)
    exact: bool = field(default=True, compare=False)

    @property
    def margin(self):
        """Single signed margin: negative by the worst violation."""
        return min(self.ccp_margin, -self.hermiticity_residual, -self.normalization_residual)

    def verdict(self, tol=DEFAULT_TOL):
        return (self.hermiticity_residual <= tol and self.normalization_residual <= tol
                and self.ccp_margin >= -tol)

    def as_dict(self):
        return {"hermiticity_residual": self.hermiticity_residual,
                "normalization_residual": self.normalization_residual,
                "ccp_margin": self.ccp_margin}


@dataclass(frozen=True)
class BranchFamily:
    d: int
    L0: object
    shifts: tuple = ()
    pair_info: tuple = ()
    eigenvalues: np.ndarray = None

    def __len__(self):
        return len(self.shifts)

    def branch(self, m):
        m = tuple(int(x) for x in m)
        if len(m) != len(self.shifts):
            raise ValueError(f"expected {len(self.shifts)} branch integers, got {len(m)}")
        L = self.L0.copy()
        for mc, A in zip(m, self.shifts):
            if mc:
                L = L + mc * A
        return L


@dataclass
class GeneratorReport:
    verdict: Verdict
    kind: str = "quantum"
    witness_L: object = None
    witness_m: tuple = None
    conditions: object = None
    branch_bound_used: int = DEFAULT_BRANCH_BOUND
    tolerance_used: float = DEFAULT_TOL
    cause: str = None
    candidates_searched: int = 0
    series_residuals: list = None
    note: str = None

    @property
    def label(self):
        if self.kind == "classical":
            return {Verdict.MARKOVIAN: "embeddable", Verdict.NON_MARKOVIAN: "non-embeddable",
                    Verdict.INDETERMINATE: "indeterminate"}[self.verdict]
        return self.verdict.value

    def as_dict(self, include_witness=True):
        from .channel import encode_matrix
        out = {"verdict": self.label, "kind": self.kind, "cause": self.cause,
               "witness_m": list(self.witness_m) if self.witness_m is not None else None,
               "conditions": self.conditions.as_dict() if self.conditions is not None else None,
               "branch_bound": self.branch_bound_used, "tolerance": self.tolerance_used,
               "candidates_searched": self.candidates_searched, "note": self.note}
        if self.series_residuals is not None:
            out["series_residuals"] = [float(r) for r in self.series_residuals]
        if include_witness:
            out["witness_L"] = (None if self.witness_L is None
                                else encode_matrix(self.witness_L, self.kind))
        return out


@dataclass(frozen=True)
class LindbladDecomposition:
    H: np.ndarray
    G: np.ndarray
    F_ops: tuple = field(repr=False)
    reassembly_residual: float = 0.0

    def generator(self):
        return lindblad_generator(self.H, self.G, self.F_ops)


# ------------------------------------------------------------- generators

def traceless_basis(d):
    """Orthonormal Hermitian basis of the traceless d x d matrices (Gell-Mann)."""
    ops = []
    for j in range(d):
        for k in range(j + 1, d):
            S = np.zeros((d, d), dtype=complex)
            S[j, k] = S[k, j] = 1 / math.sqrt(2)
            A = np.zeros((d, d), dtype=complex)
            A[j, k], A[k, j] = -1j / math.sqrt(2), 1j / math.sqrt(2)
            ops += [S, A]
    for l in range(1, d):
        D = np.zeros((d, d), dtype=complex)
        D[np.arange(l), np.arange(l)] = 1
        D[l, l] = -l
        ops.append(D / math.sqrt(l * (l + 1)))
    return tuple(ops)


def lindblad_generator(H, G, F_ops=None):
    """Transfer matrix of ``rho -> i[rho, H] + sum G_ab (F_a rho F_b^+ - {F_b^+ F_a, rho}/2)``."""
    H = np.asarray(H, dtype=complex)
    d = H.shape[0]
    F = np.array(traceless_basis(d) if F_ops is None else F_ops, dtype=complex)
    G = np.asarray(G, dtype=complex)
    eye = np.eye(d)
    L = -1j * np.kron(H, eye) + 1j * np.kron(eye, H.T)
    if np.any(G):
        jump = np.einsum("ab,aij,bkl->ikjl", G, F, F.conj()).reshape(d * d, d * d)
        K = np.einsum("ab,bji,ajk->ik", G, F.conj(), F)   # sum G_ab F_b^+ F_a
        L += jump - 0.5 * np.kron(K, eye) - 0.5 * np.kron(eye, K.T)
    return L


def sample_lindblad(d, seed, hamiltonian_scale=1.0, dissipation_scale=1.0):
    """Random valid generator from a seeded Hermitian H and PSD G (deterministic per seed).

    G has rank d^2 - 2, so the smallest eigenvalue of the ccp block is zero.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = hamiltonian_scale * (X + X.conj().T) / (2 * math.sqrt(2 * d))
    n = d * d - 1
    # rank n - 1: one dissipative direction is left empty, so every sample sits
    # on the boundary of the ccp cone (the strictest case for the checks)
    W = rng.normal(size=(n, n - 1)) + 1j * rng.normal(size=(n, n - 1))
    G = dissipation_scale * (W @ W.conj().T) / (2 * n * d)
    return lindblad_generator(H, G)


# ------------------------------------------------------------- conditions

def check_conditions(L, tol=DEFAULT_TOL):
    """Residuals of conditions (i)-(iii) for a d^2 x d^2 generator (dense or sparse)."""
    d = hilbert_dim(L.shape[0])
    C = gamma_reshuffle(L)
    herm = frob(C - C.conj().T)
    w = omega_vector(d)
    if sp.issparse(L):
        row = np.asarray(sp.csr_array(L).T @ w).ravel()
    else:
        row = w @ np.asarray(L)
    norm = float(np.linalg.norm(row))
    ccp = min_eig_hermitian(hermitian_part(C), project=w)
    return LindbladConditions(herm, norm, ccp)


# ------------------------------------------------------------- branches

def _as_transfer(E):
    return E if isinstance(E, TransferMatrix) else TransferMatrix.from_matrix(E)


def build_branch_family(E, tol=DEFAULT_TOL):
    """Principal logarithm plus one flip-invariant shift per conjugate eigenvalue pair.

    Real positive eigenvalues (degenerate or not) get no shift.  Nonreal
    eigenvalues must be simple; otherwise DegenerateSpectrum is raised.
    """
    E = _as_transfer(E)
    M = E.dense()
    es = eig_decompose(M, tol, check_degenerate=False)
    vals = es.eigenvalues
    _log_domain_check(vals, tol)
    scale = max(1.0, float(np.abs(vals).max()))
    nonreal = np.flatnonzero(np.abs(vals.imag) > tol * scale)
    for a in nonreal:
        gap = np.abs(vals - vals[a])
        gap[a] = np.inf
        if gap.min() <= tol * scale:
            raise DegenerateSpectrum(f"nonreal eigenvalue {vals[a]:.6g} is degenerate")
    L0 = (es.right * np.log(vals)) @ es.left
    L0 = (L0 + flip_op(L0)) / 2
    shifts, pairs = [], []
    upper = sorted((a for a in nonreal if vals[a].imag > 0), key=lambda a: (-abs(vals[a]), vals[a].imag))
    lower = set(int(a) for a in nonreal if vals[a].imag < 0)
    for a in upper:
        cands = sorted(lower, key=lambda b: abs(vals[b] - np.conj(vals[a])))
        if not cands or abs(vals[cands[0]] - np.conj(vals[a])) > math.sqrt(tol) * scale:
            raise InvalidSnapshot("spectrum is not closed under complex conjugation "
                                  "(snapshot is not Hermiticity preserving)")
        b = cands[0]
        lower.discard(b)
        P = np.outer(es.right[:, a], es.left[a, :])
        shifts.append(2j * np.pi * (P - flip_op(P)))
        pairs.append((int(a), int(b)))
    return BranchFamily(E.dim, L0, tuple(shifts), tuple(pairs), vals)


def _box(n, bound):
    return itertools.product(range(-bound, bound + 1), repeat=n)


class _Evaluator:
    """Lindblad conditions for many branches of one family."""

    def __init__(self, family, tol):
        self.family = family
        self.tol = tol
        D = family.L0.shape[0]
        self.stacked = (D <= _STACK_MAX_DIM and not sp.issparse(family.L0)
                        and not any(sp.issparse(A) for A in family.shifts))
        if self.stacked:
            w = omega_vector(family.d)
            mats = [np.asarray(family.L0, dtype=complex)] + [np.asarray(A) for A in family.shifts]
            C = np.array([gamma_reshuffle(M) for M in mats])
            self.Z = C - C.conj().transpose(0, 2, 1)
            self.N = np.array([w @ M for M in mats])
            P = np.eye(D) - np.outer(w, w)
            self.H = np.array([P @ hermitian_part(c) @ P for c in C])
            self.diag = np.einsum("kii->ki", self.H).real
            self.chunk = max(1, _STACK_BYTES // (16 * D * D))

    def batches(self, candidates):
        """Yield (m_batch, [LindbladConditions]) in candidate order."""
        it = iter(candidates)
        while True:
            batch = list(itertools.islice(it, self.chunk if self.stacked else 1))
            if not batch:
                return
            if self.stacked:
                yield batch, self._stacked(batch)
            else:
                yield batch, [check_conditions(self.family.branch(batch[0]))]

    def _stacked(self, batch):
        m = np.asarray(batch, dtype=float).reshape(len(batch), -1)
        x = np.concatenate([np.ones((len(batch), 1)), m], axis=1)
        herm = np.linalg.norm(np.tensordot(x, self.Z, axes=1), axis=(1, 2))
        norm = np.linalg.norm(x @ self.N, axis=1)
        # min eigenvalue <= min diagonal entry: an exact, cheap upper bound that
        # lets most of the box skip the eigensolver
        ccp = (x @ self.diag).min(axis=1)
        live = np.flatnonzero(ccp > -GRAY_FACTOR * self.tol)
        if live.size:
            ccp[live] = np.linalg.eigvalsh(np.tensordot(x[live], self.H, axes=1))[:, 0]
        return [LindbladConditions(float(h), float(n), float(c), exact)
                for h, n, c, exact in zip(herm, norm, ccp, np.isin(np.arange(len(batch)), live))]


def _closure_ok(L, E, tol, times=1.0):
    Et = mat_exp(L * times)
    scale = max(1.0, frob(E))
    return frob(Et - E) <= tol * scale


def _search(family, candidates, tol, accept, evaluator=None, recheck=None):
    """First feasible candidate (lexicographic) plus the best one seen."""
    ev = _Evaluator(family, tol) if evaluator is None else evaluator
    recheck = check_conditions if recheck is None else recheck
    best, best_m, searched = None, None, 0
    for batch, conds in ev.batches(candidates):
        for m, c in zip(batch, conds):
            searched += 1
            if c.verdict(tol) and accept(m):
                return tuple(m), c, searched, True
            if best is None or c.margin > best.margin:
                best, best_m = c, tuple(m)
    if best is not None and not best.exact:
        best = recheck(family.branch(best_m))
    return best_m, best, searched, False


def _failure_report(exc, tol, bound, kind="quantum"):
    if isinstance(exc, LogUndefined) and exc.lone:
        verdict = Verdict.NON_MARKOVIAN
    else:
        verdict = Verdict.INDETERMINATE
    return GeneratorReport(verdict, kind=kind, tolerance_used=tol, branch_bound_used=bound,
                           cause=f"{type(exc).__name__}: {exc}")


def _verdict_from_search(m, conds, searched, found, tol, bound, kind="quantum"):
    note = None
    if found:
        verdict = Verdict.MARKOVIAN
    elif conds is not None and classify_margin(conds.margin, tol) == "gray":
        verdict = Verdict.INDETERMINATE
        note = "best branch lies in the weak-membership gray band"
    else:
        verdict = Verdict.NON_MARKOVIAN
        note = "no valid generator within the searched branch box"
    return GeneratorReport(verdict, kind=kind, witness_m=m if found else None, conditions=conds,
                           branch_bound_used=bound, tolerance_used=tol,
                           candidates_searched=searched, note=note)


def decide_markovian(E, tol=DEFAULT_TOL, branch_bound=DEFAULT_BRANCH_BOUND, *, family=None,
                     candidates=None, require_cpt=True):
    """Search branches of ``log E`` for a Lindblad generator.

    ``family`` and ``candidates`` override the eigen-built branch family and
    the integer box ``[-branch_bound, branch_bound]^pairs`` (candidates are
    visited in the order given).  Spectral failures become reports carrying a
    ``cause``: a lone negative eigenvalue is NON_MARKOVIAN (no flip-invariant
    logarithm exists), anything else INDETERMINATE.
    """
    E = _as_transfer(E)
    if require_cpt:
        rep = validate_cpt(E, tol)
        if not rep.valid:
            raise InvalidSnapshot(f"snapshot is not CPT at tol {tol:g}: {rep.margins}")
    if family is None:
        try:
            family = build_branch_family(E, tol)
        except (LogUndefined, DegenerateSpectrum, NonDiagonalizable) as exc:
            return _failure_report(exc, tol, branch_bound)
    if candidates is None:
        candidates = _box(len(family), branch_bound)

    def closes(m):
        return _closure_ok(family.branch(m), E.matrix, tol)

    m, conds, searched, found = _search(family, candidates, tol, closes)
    report = _verdict_from_search(m, conds, searched, found, tol, branch_bound)
    if found:
        report.witness_L = family.branch(m)
        # soundness: re-derive the witness conditions from scratch
        if not (check_conditions(report.witness_L).verdict(tol)
                and _closure_ok(report.witness_L, E.matrix, tol)):
            raise RuntimeError("internal error: witness failed its soundness re-check")
    return report


def decompose_lindblad(L, tol=DEFAULT_TOL):
    """Recover (H, G) over the Gell-Mann basis from a valid generator.

    G is read off the Choi matrix compressed to the traceless operators; the
    coherent part K = -iH - (1/2) sum G_ab F_b^+ F_a from its overlap with the
    maximally entangled vector.  The contract is the reassembly residual.
    """
    L = to_dense(L)
    conds = check_conditions(L, tol)
    if not conds.verdict(tol):
        raise NotLindblad(f"generator violates the Lindblad conditions: {conds.as_dict()}")
    d = hilbert_dim(L.shape[0])
    F = np.array(traceless_basis(d))
    f = F.reshape(len(F), -1)
    C = gamma_reshuffle(L)
    w = omega_vector(d)
    G = f.conj() @ C @ f.T
    G = (G + G.conj().T) / 2
    k_traceless = np.einsum("a,aij->ij", f.conj() @ (C @ w), F) / math.sqrt(d)
    k0 = (w @ C @ w).real / (2 * d)
    K = k0 * np.eye(d) + k_traceless
    M = np.einsum("ab,bji,ajk->ik", G, F.conj(), F)
    H = 1j * (K + 0.5 * M)
    H = (H + H.conj().T) / 2
    H -= np.trace(H).real / d * np.eye(d)
    residual = float(np.linalg.norm(lindblad_generator(H, G, F) - L))
    return LindbladDecomposition(H, G, tuple(F), residual)


def fit_generator_series(series, tol=DEFAULT_TOL, branch_bound=DEFAULT_BRANCH_BOUND):
    """One generator consistent with every snapshot ``E_k = exp(t_k L)``.

    Candidates are ``L_m / t_1`` for branches of the earliest snapshot; one is
    accepted only if it passes the Lindblad conditions and reproduces every
    snapshot within ``tol`` (relative to max(1, |E_k|)).
    """
    if not isinstance(series, SnapshotSeries):
        series = SnapshotSeries(*zip(*series))
    if series.kind != "quantum":
        raise InconsistentSeries("fit_generator_series needs quantum snapshots")
    t1, E1 = series.times[0], series.snapshots[0]
    try:
        fam = build_branch_family(E1, tol)
    except (LogUndefined, DegenerateSpectrum, NonDiagonalizable) as exc:
        return _failure_report(exc, tol, branch_bound)
    scaled = BranchFamily(fam.d, fam.L0 / t1, tuple(A / t1 for A in fam.shifts), fam.pair_info,
                          fam.eigenvalues)

    def residuals(L):
        return [frob(mat_exp(t * L) - E.matrix) / max(1.0, frob(E.matrix))
                for t, E in zip(series.times, series.snapshots)]

    def consistent(m):
        return max(residuals(scaled.branch(m))) <= tol

    m, conds, searched, found = _search(scaled, _box(len(scaled), branch_bound), tol, consistent)
    report = _verdict_from_search(m, conds, searched, found, tol, branch_bound)
    if found:
        report.witness_L = scaled.branch(m)
        report.series_residuals = residuals(report.witness_L)
    else:
        # a Lindblad-valid branch may exist that fails the later snapshots
        if report.verdict is Verdict.MARKOVIAN:  # pragma: no cover
            raise AssertionError
        if conds is not None and conds.verdict(tol):
            report.note = "valid generators exist for the first snapshot but none fits the series"
            report.verdict = Verdict.NON_MARKOVIAN
        if m is not None:
            report.series_residuals = residuals(scaled.branch(m))
    return report
