"""Classical embedding problem: is a stochastic matrix the exponential of a rate matrix?

A valid classical generator has nonnegative off-diagonal entries and zero
column sums.  Candidate logarithms are the principal logarithm plus real
shifts ``2 pi i (P - conj(P))`` for each conjugate eigenvalue pair (spectral
projector ``P``), so every branch stays real.
"""
from dataclasses import dataclass
import math

import numpy as np

from .branch import (DEFAULT_BRANCH_BOUND, BranchFamily, _box, _failure_report,
                     _search, _verdict_from_search)
from .channel import StochasticMatrix, validate_stochastic
from .errors import DegenerateSpectrum, InvalidSnapshot, LogUndefined, NonDiagonalizable
from .matkernel import DEFAULT_TOL, _log_domain_check, eig_decompose, frob, mat_exp


@dataclass(frozen=True)
class ClassicalGeneratorConditions:
    offdiag_min: float
    column_sum_residual: float
    realness_residual: float
    exact: bool = True

    @property
    def margin(self):
        return min(self.offdiag_min, -self.column_sum_residual, -self.realness_residual)

    def verdict(self, tol=DEFAULT_TOL):
        return (self.offdiag_min >= -tol and self.column_sum_residual <= tol
                and self.realness_residual <= tol)

    def as_dict(self):
        return {"offdiag_min": self.offdiag_min, "column_sum_residual": self.column_sum_residual,
                "realness_residual": self.realness_residual}


def check_classical_generator(L, tol=DEFAULT_TOL):
    """Residuals of the rate-matrix conditions (``tol`` only sets the verdict)."""
    L = np.asarray(L.toarray() if hasattr(L, "toarray") else L)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {L.shape}")
    n = L.shape[0]
    off = L.real[~np.eye(n, dtype=bool)]
    offdiag_min = float(off.min()) if off.size else 0.0
    colsum = float(np.linalg.norm(L.sum(axis=0)))
    realness = float(np.linalg.norm(L.imag)) if np.iscomplexobj(L) else 0.0
    return ClassicalGeneratorConditions(offdiag_min, colsum, realness)


def build_real_branch_family(T, tol=DEFAULT_TOL):
    """Principal real logarithm of ``T`` and one real shift per conjugate pair."""
    T = np.asarray(T, dtype=float)
    es = eig_decompose(T, tol, check_degenerate=False)
    vals = es.eigenvalues
    _log_domain_check(vals, tol)
    scale = max(1.0, float(np.abs(vals).max()))
    upper = [a for a in range(len(vals)) if vals[a].imag > tol * scale]
    for a in np.flatnonzero(np.abs(vals.imag) > tol * scale):
        gap = np.abs(vals - vals[a])
        gap[a] = np.inf
        if gap.min() <= tol * scale:
            raise DegenerateSpectrum(f"nonreal eigenvalue {vals[a]:.6g} is degenerate")
    L0 = ((es.right * np.log(vals)) @ es.left).real
    shifts, pairs = [], []
    for a in sorted(upper, key=lambda a: (-abs(vals[a]), vals[a].imag)):
        b = int(np.argmin(np.abs(vals - np.conj(vals[a]))))
        P = np.outer(es.right[:, a], es.left[a, :])
        # 2 pi i (P - conj P): +2 pi i on lambda_a, -2 pi i on its conjugate
        shifts.append(-4 * math.pi * P.imag)
        pairs.append((int(a), b))
    return BranchFamily(T.shape[0], L0, tuple(shifts), tuple(pairs), vals)


class _LinearEvaluator:
    """All classical conditions are linear in m, so whole batches vectorize."""

    def __init__(self, family, tol, chunk=4096):
        self.tol = tol
        self.chunk = chunk
        mats = np.array([family.L0] + list(family.shifts))
        n = family.d
        self.off = mats[:, ~np.eye(n, dtype=bool)]
        self.col = mats.sum(axis=1)

    def batches(self, candidates):
        import itertools
        it = iter(candidates)
        while True:
            batch = list(itertools.islice(it, self.chunk))
            if not batch:
                return
            x = np.concatenate([np.ones((len(batch), 1)),
                                np.asarray(batch, dtype=float).reshape(len(batch), -1)], axis=1)
            off = (x @ self.off).min(axis=1, initial=0.0)
            col = np.linalg.norm(x @ self.col, axis=1)
            yield batch, [ClassicalGeneratorConditions(float(o), float(c), 0.0)
                          for o, c in zip(off, col)]


def decide_embeddable(T, tol=DEFAULT_TOL, branch_bound=DEFAULT_BRANCH_BOUND):
    """Search real logarithm branches of ``T`` for a valid rate matrix."""
    if not isinstance(T, StochasticMatrix):
        T = StochasticMatrix.from_matrix(T)
    rep = validate_stochastic(T, tol)
    if not rep.valid:
        raise InvalidSnapshot(f"matrix is not column-stochastic at tol {tol:g}: {rep.margins}")
    M = np.asarray(T.matrix, dtype=float)
    try:
        family = build_real_branch_family(M, tol)
    except (LogUndefined, DegenerateSpectrum, NonDiagonalizable) as exc:
        return _failure_report(exc, tol, branch_bound, kind="classical")

    def closes(m):
        return frob(mat_exp(family.branch(m)) - M) <= tol * max(1.0, frob(M))

    m, conds, searched, found = _search(
        family, _box(len(family), branch_bound), tol, closes,
        evaluator=_LinearEvaluator(family, tol), recheck=check_classical_generator)
    report = _verdict_from_search(m, conds, searched, found, tol, branch_bound, kind="classical")
    if found:
        report.witness_L = family.branch(m)
        if not (check_classical_generator(report.witness_L).verdict(tol) and closes(m)):
            raise RuntimeError("internal error: witness failed its soundness re-check")
    return report


def closed_form_2x2(T):
    """Closed-form answer for 2x2 chains: (embeddable?, 1 - a - b)."""
    T = np.asarray(T, dtype=float)
    a, b = T[1, 0], T[0, 1]
    return 1 - a - b > 0, 1 - a - b
