"""Encoding monotone 1-in-3SAT into quantum snapshots (and classical generators).

Pipeline::

    SatInstance -> clause vectors v_c -> S (exact rationals) -> Q, P, B^(c)
                -> L0, A^(c) (sparse transfer matrices) -> E = exp(L0)

Index layout of the 4n-dimensional system: coordinate ``a`` of the vectors,
then two binary factors ``s`` and ``t``; flat index ``4a + 2s + t``.

``Q = k I + S (x) J2 (x) J2 + sum_c v_c v_c^T (x) D (x) K`` with
``D = [[1,-1],[-1,1]]`` and ``K = [[0,-1/3],[1/3,0]]``;
``B^(c) = v_c v_c^T (x) D (x) [[0,1],[-1,0]]``.  The "black squares" of a
4x4 block are the entries with ``t != t'``; in the diagonal blocks of the
clause and variable coordinates they carry the 1-in-3SAT inequalities.

With this explicit construction the diagonal of Q is ``k + S_aa`` rather than
``k``; the second reduced positivity condition still holds because
``diag Q + alpha = S_aa + 1 > 0`` for ``alpha = sigma + 1``.

Assignments ``m`` are indexed by variable (one shift per variable vector).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
import itertools
import logging
import math
import os
import re

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import kernels
from .branch import BranchFamily, Verdict, check_conditions, decide_markovian
from .channel import (SnapshotSeries, TransferMatrix, encode_matrix, validate_cpt,
                      write_json_atomic)
from .embed import check_classical_generator
from .errors import BalancingFailed, InvalidClause, ParseError, TooLarge
from .matkernel import frob, mat_exp, min_eig_hermitian

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_VARS = 30
VERIFY_MAX_VARS = 12
VERIFY_MAX_CLAUSES = 8
KAPPA = 1e-3
MAX_BALANCING_RETRIES = 12
FILTER_FLOOR = -1e-12

_D = np.array([[1, -1], [-1, 1]])
_K = (Fraction(0), Fraction(-1, 3), Fraction(1, 3), Fraction(0))   # row-major 2x2
_Y = np.array([[0, 1], [-1, 0]])


# ------------------------------------------------------------------ SAT

@dataclass(frozen=True)
class SatInstance:
    """Monotone 1-in-3SAT: every clause needs exactly one true variable."""
    num_vars: int
    clauses: tuple = ()

    def __post_init__(self):
        if int(self.num_vars) < 1:
            raise InvalidClause("an instance needs at least one variable")
        clauses = []
        for cl in self.clauses:
            cl = tuple(int(x) for x in cl)
            if len(cl) != 3:
                raise InvalidClause(f"clause {cl} does not have exactly 3 variables")
            if len(set(cl)) != 3:
                raise InvalidClause(f"clause {cl} repeats a variable")
            if min(cl) < 1 or max(cl) > self.num_vars:
                raise InvalidClause(f"clause {cl} references a variable outside 1..{self.num_vars}")
            clauses.append(tuple(sorted(cl)))
        object.__setattr__(self, "num_vars", int(self.num_vars))
        object.__setattr__(self, "clauses", tuple(clauses))

    @property
    def num_clauses(self):
        return len(self.clauses)

    def clause_masks(self):
        return np.array([sum(1 << (v - 1) for v in cl) for cl in self.clauses], dtype=np.int64)

    def to_text(self):
        lines = [f"p 1in3 {self.num_vars} {self.num_clauses}"]
        lines += [f"{i} {j} {k} 0" for i, j, k in self.clauses]
        return "\n".join(lines) + "\n"

    def satisfied_by(self, assignment):
        return all(sum(bool(assignment[v - 1]) for v in cl) == 1 for cl in self.clauses)


def parse_sat(text):
    """Parse ``p 1in3 V C`` followed by C clause lines ``i j k 0``.

    Blank lines and ``c`` comment lines are ignored.
    """
    header, clauses = None, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if header is None:
            parts = line.split()
            if len(parts) != 4 or parts[:2] != ["p", "1in3"]:
                raise ParseError("expected header 'p 1in3 V C'", lineno)
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError:
                raise ParseError("V and C must be integers", lineno) from None
            if header[0] < 1 or header[1] < 0:
                raise ParseError("need V >= 1 and C >= 0", lineno)
            continue
        if not re.fullmatch(r"-?\d+(\s+-?\d+)*", line):
            raise ParseError(f"malformed clause line {line!r}", lineno)
        nums = [int(x) for x in line.split()]
        if nums[-1] != 0:
            raise ParseError("clause line must end with 0", lineno)
        lits = nums[:-1]
        if len(lits) != 3:
            raise InvalidClause(f"clause has {len(lits)} variables, expected 3", lineno)
        if any(x < 1 for x in lits):
            raise InvalidClause("variables must be positive (monotone instances only)", lineno)
        if len(set(lits)) != 3:
            raise InvalidClause(f"clause {lits} repeats a variable", lineno)
        if max(lits) > header[0]:
            raise InvalidClause(f"variable {max(lits)} exceeds V={header[0]}", lineno)
        clauses.append(tuple(lits))
    if header is None:
        raise ParseError("missing 'p 1in3 V C' header")
    if len(clauses) != header[1]:
        raise ParseError(f"header announces {header[1]} clauses, found {len(clauses)}")
    return SatInstance(header[0], tuple(clauses))


@dataclass(frozen=True)
class SatResult:
    satisfiable: bool
    assignment: tuple = None

    def __str__(self):
        if not self.satisfiable:
            return "Unsatisfiable"
        true = [str(i + 1) for i, x in enumerate(self.assignment) if x]
        return f"Satisfiable(true: {', '.join(true) or 'none'})"


def _mask_to_assignment(mask, num_vars):
    return tuple(bool((mask >> c) & 1) for c in range(num_vars))


def sat_brute_force(inst):
    """Exhaustive search; returns the satisfying assignment with the smallest
    integer encoding (variable c is bit c-1), so x1 is preferred true first."""
    if inst.num_vars > BRUTE_FORCE_MAX_VARS:
        raise TooLarge(f"brute force is capped at V <= {BRUTE_FORCE_MAX_VARS}")
    mask = int(kernels.exactly_one_search(inst.clause_masks(), inst.num_vars))
    if mask < 0:
        return SatResult(False)
    return SatResult(True, _mask_to_assignment(mask, inst.num_vars))


# --------------------------------------------------------------- vectors

@dataclass(frozen=True)
class ClauseVectors:
    """Mutually orthogonal vectors v_c (rows of ``v``) of common squared norm N.

    The first C + V coordinates are exact 0/1 incidence entries (``incidence``);
    the last V come from factorizing ``N I - Gram``.
    """
    incidence: np.ndarray
    v: np.ndarray
    vprime: np.ndarray
    N: int

    @property
    def n0(self):
        return self.v.shape[1]

    def gram_residual(self):
        allv = np.vstack([self.v, self.vprime])
        return float(np.abs(allv @ allv.T - self.N * np.eye(len(allv))).max())


def build_clause_vectors(inst):
    V, C = inst.num_vars, inst.num_clauses
    inc = np.zeros((V, C + V), dtype=np.int64)
    for j, cl in enumerate(inst.clauses):
        for var in cl:
            inc[var - 1, j] = 1
    inc[np.arange(V), C + np.arange(V)] = 1
    gram = inc @ inc.T
    lam = float(np.linalg.eigvalsh(gram.astype(float)).max())
    N = int(math.ceil(lam - 1e-9)) + 1
    chol = np.linalg.cholesky(N * np.eye(V) - gram)    # N I - G = chol chol^T
    v = np.hstack([inc.astype(float), chol])
    vprime = scipy.linalg.null_space(v).T * math.sqrt(N)
    return ClauseVectors(inc, v, vprime, N)


# --------------------------------------------------------------------- S

@dataclass(frozen=True)
class SMatrix:
    exact: tuple            # tuple of tuples of Fraction
    s_big: Fraction
    column_sum: Fraction    # common column sum T of S
    sigma: Fraction         # common column sum of Q - kI (= 4T)

    @property
    def n(self):
        return len(self.exact)

    def as_float(self):
        return np.array([[float(x) for x in row] for row in self.exact])


def build_S(inst, vectors, s_big=None):
    """Symmetric S with diagonals 1/2 (clauses), 5/6 (variables), ``s_big``
    elsewhere among the first C + 2V indices, plus one balancing index that
    equalizes all column sums."""
    V, C = inst.num_vars, inst.num_clauses
    n0 = vectors.n0
    s_big = Fraction(C + 2) if s_big is None else Fraction(s_big)
    if s_big < Fraction(5, 6):
        raise BalancingFailed("s_big must be at least 5/6 for the balancing scheme")
    diag = [Fraction(1, 2)] * C + [Fraction(5, 6)] * V + [s_big] * (n0 - C - V)
    S = [[s_big] * (n0 + 1) for _ in range(n0 + 1)]
    for a in range(n0):
        S[a][a] = diag[a]
    total = n0 * s_big      # common column sum; >= every partial column sum
    for a in range(n0):
        bal = total - (diag[a] + (n0 - 1) * s_big)
        if bal < 0:
            raise BalancingFailed(f"balancing entry for column {a} would be negative")
        S[n0][a] = S[a][n0] = bal
    S[n0][n0] = total - sum(S[a][n0] for a in range(n0))
    if S[n0][n0] < 0:
        raise BalancingFailed("balancing diagonal would be negative")
    exact = tuple(tuple(row) for row in S)
    return SMatrix(exact, s_big, total, 4 * total)


# ------------------------------------------------------------- assembly

def _vvT_blocks(vectors, n):
    """Outer products v_c v_c^T padded to n x n (balancing index is zero)."""
    V, n0 = vectors.v.shape
    out = np.zeros((V, n, n))
    out[:, :n0, :n0] = np.einsum("ca,cb->cab", vectors.v, vectors.v)
    return out


def assemble_QPB(inst, vectors, S):
    """Return (Q, P, B, k, alpha); B has shape (V, d, d)."""
    n = S.n
    d = 4 * n
    k = -S.sigma
    alpha = S.sigma + 1
    outer = _vvT_blocks(vectors, n)
    K = np.array([[float(_K[0]), float(_K[1])], [float(_K[2]), float(_K[3])]])
    DK, DY = np.kron(_D, K), np.kron(_D, _Y)
    Q = float(k) * np.eye(d) + np.kron(S.as_float(), np.ones((4, 4)))
    Q += np.einsum("cab,st->asbt", outer, DK).reshape(d, d) if len(outer) else 0
    B = np.array([np.kron(o, DY) for o in outer]) if len(outer) else np.zeros((0, d, d))
    P = float(alpha) * (np.eye(d) - np.ones((d, d)))
    return Q, P, B, k, alpha


def assemble_liouvillians(Q, P, B):
    """Sparse transfer matrices L0 and A^(c) of the special forms.

    ``L0[(i,i),(j,j)] = 2 pi Q_ij`` (classical rates between populations),
    ``L0[(i,j),(i,j)] = 2 pi P_ij`` for i != j (coherence damping) and
    ``A^(c)[(i,i),(j,j)] = 2 pi B^(c)_ij`` for i != j.
    """
    d = Q.shape[0]
    D = d * d
    diag_idx = np.arange(d) * (d + 1)
    ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    rows = [diag_idx[ii.ravel()]]
    cols = [diag_idx[jj.ravel()]]
    vals = [2 * np.pi * Q.ravel()]
    off = ii != jj
    pos = ii[off] * d + jj[off]
    rows.append(pos)
    cols.append(pos)
    vals.append(2 * np.pi * P[off])
    L0 = sp.csr_array((np.concatenate(vals).astype(complex),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(D, D))
    L0.eliminate_zeros()
    shifts = []
    for Bc in B:
        Bo = np.where(off, Bc, 0.0)
        r, c = np.nonzero(Bo)
        A = sp.csr_array(((2 * np.pi * Bo[r, c]).astype(complex), (diag_idx[r], diag_idx[c])),
                         shape=(D, D))
        shifts.append(A)
    return L0, tuple(shifts)


# ---------------------------------------------------------------- bundle

@dataclass
class ReductionBundle:
    instance: SatInstance
    vectors: ClauseVectors
    S: SMatrix
    Q: np.ndarray
    P: np.ndarray
    B: np.ndarray
    k: Fraction
    alpha: Fraction
    L0: object
    A: tuple
    E: TransferMatrix = None
    balancing_retries: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.S.n

    @property
    def d(self):
        return 4 * self.S.n

    @property
    def sigma(self):
        return self.S.sigma

    @property
    def num_branches(self):
        return len(self.A)

    def family(self):
        """The constructed branch family (L0, A^(c))."""
        return BranchFamily(self.d, self.L0, tuple(self.A))

    def branch(self, m):
        return self.family().branch(m)

    def encoding_blocks(self):
        """Diagonal 4x4 blocks that carry clause and variable inequalities."""
        return range(self.instance.num_clauses + self.instance.num_vars)

    def encoding_mask(self):
        """Boolean d x d mask of the encoding positions (black squares)."""
        mask = np.zeros((self.d, self.d), dtype=bool)
        for a in self.encoding_blocks():
            for s, t, s2, t2 in itertools.product(range(2), repeat=4):
                if t != t2:
                    mask[4 * a + 2 * s + t, 4 * a + 2 * s2 + t2] = True
        return mask


def filtering_margin(Q, B, exclude=None):
    """Exact worst case over m in {0,1}^V of the off-diagonal entries
    ``Q_ij + sum_c m_c B^(c)_ij``, skipping ``exclude`` positions."""
    worst = Q + np.minimum(B, 0).sum(axis=0) if len(B) else Q.copy()
    skip = np.eye(Q.shape[0], dtype=bool)
    if exclude is not None:
        skip |= exclude
    vals = worst[~skip]
    return float(vals.min()) if vals.size else 0.0


def build_reduction(inst, s_big=None, emit=True):
    """Run the whole construction, doubling ``s_big`` until filtering holds."""
    vectors = build_clause_vectors(inst)
    s_big = Fraction(inst.num_clauses + 2) if s_big is None else Fraction(s_big)
    for retry in range(MAX_BALANCING_RETRIES + 1):
        S = build_S(inst, vectors, s_big)
        Q, P, B, k, alpha = assemble_QPB(inst, vectors, S)
        bundle = ReductionBundle(inst, vectors, S, Q, P, B, k, alpha, None, (),
                                 balancing_retries=retry)
        margin = filtering_margin(Q, B, bundle.encoding_mask())
        if margin >= FILTER_FLOOR:
            break
        log.info("filtering check failed (margin %.3g) with s_big=%s; doubling", margin, s_big)
        s_big *= 2
    else:
        raise BalancingFailed(f"filtering still fails after {MAX_BALANCING_RETRIES} doublings")
    bundle.metadata["filtering_margin"] = margin
    bundle.L0, bundle.A = assemble_liouvillians(Q, P, B)
    if emit:
        emit_snapshot(bundle)
    return bundle


def emit_snapshot(bundle, tol=None):
    """E = exp(L0); the CPT check result is stored in ``bundle.metadata``."""
    E = TransferMatrix(bundle.d, mat_exp(bundle.L0))
    rep = validate_cpt(E, default_tolerance(bundle.instance) if tol is None else tol)
    bundle.E = E
    bundle.metadata["cpt_check"] = rep.as_dict()
    return E


def emit_series(bundle, times):
    times = tuple(float(t) for t in times)
    snaps = tuple(TransferMatrix(bundle.d, mat_exp(bundle.L0 * t)) for t in times)
    return SnapshotSeries(times, snaps)


# ------------------------------------------------------------ inequalities

@dataclass(frozen=True)
class EncodingInequality:
    """``sum_c coeffs[c] * m_c >= rhs`` (variables 1-based)."""
    coeffs: tuple       # ((var, Fraction), ...) sorted by var
    rhs: Fraction
    block: int

    def holds(self, m):
        return sum(c * m[v - 1] for v, c in self.coeffs) >= self.rhs

    def __str__(self):
        terms = " ".join(f"{'+' if c > 0 else '-'} {'' if abs(c) == 1 else f'{abs(c)}*'}m{v}"
                         for v, c in self.coeffs)
        return f"{terms.lstrip('+ ')} >= {self.rhs}"


def _exact_block_entry(bundle, a, s, t, s2, t2):
    """Exact (Q entry, {var: B coefficient}) in diagonal block a (a < C + V)."""
    S = bundle.S.exact
    q = S[a][a] + (bundle.k if (s, t) == (s2, t2) else 0)
    coeffs = {}
    for c in range(bundle.instance.num_vars):
        w = int(bundle.vectors.incidence[c, a]) ** 2
        if w:
            q += w * int(_D[s, s2]) * _K[2 * t + t2]
            coeffs[c + 1] = Fraction(w * int(_D[s, s2]) * int(_Y[t, t2]))
    return q, coeffs


def extract_encoding_inequalities(bundle, check_float=True):
    """Inequalities read from the black squares of the clause/variable blocks.

    Each entry ``sum_c B_ij m_c + Q_ij >= 0`` is normalized so that the largest
    absolute coefficient is 1 and rewritten as ``sum coeff*m >= rhs``.
    Duplicates are removed; order is by block then first appearance.
    """
    out, seen = [], set()
    for a in bundle.encoding_blocks():
        for s, t, s2, t2 in itertools.product(range(2), repeat=4):
            if t == t2:
                continue
            q, coeffs = _exact_block_entry(bundle, a, s, t, s2, t2)
            if check_float:
                i, j = 4 * a + 2 * s + t, 4 * a + 2 * s2 + t2
                fq = bundle.Q[i, j]
                fb = {c + 1: bundle.B[c, i, j] for c in range(len(bundle.B))}
                assert abs(fq - float(q)) < 1e-9, "float Q disagrees with exact entry"
                assert all(abs(fb[v] - float(coeffs.get(v, 0))) < 1e-9 for v in fb)
            coeffs = {v: c for v, c in coeffs.items() if c}
            if not coeffs:
                continue
            scale = max(abs(c) for c in coeffs.values())
            key = (tuple(sorted((v, c / scale) for v, c in coeffs.items())), -q / scale)
            if key not in seen:
                seen.add(key)
                out.append(EncodingInequality(key[0], key[1], a))
    return out


# ------------------------------------------------------------ verification

def default_tolerance(inst, kappa=KAPPA):
    """``kappa / (V (C + 2V)^3)``, the precision scale of the encoding."""
    V, C = inst.num_vars, inst.num_clauses
    return kappa / (V * (C + 2 * V) ** 3)


def _check_caps(inst):
    if inst.num_vars > VERIFY_MAX_VARS or inst.num_clauses > VERIFY_MAX_CLAUSES:
        raise TooLarge(f"verification is capped at V <= {VERIFY_MAX_VARS}, "
                       f"C <= {VERIFY_MAX_CLAUSES}")


def _binary_box(V):
    return itertools.product((0, 1), repeat=V)


def _tuple_to_mask(m):
    return sum(1 << c for c, x in enumerate(m) if x)


@dataclass
class VerificationReport:
    instance: SatInstance
    tolerance: float
    sat: SatResult
    inequality_feasible: bool
    markov_verdict: Verdict
    details: dict = field(default_factory=dict)
    disagreements: list = field(default_factory=list)

    @property
    def agree(self):
        return not self.disagreements

    @property
    def expected_verdict(self):
        return Verdict.MARKOVIAN if self.sat.satisfiable else Verdict.NON_MARKOVIAN

    def as_dict(self):
        return {"instance": {"num_vars": self.instance.num_vars,
                             "clauses": [list(c) for c in self.instance.clauses]},
                "tolerance": self.tolerance, "sat": str(self.sat),
                "satisfiable": self.sat.satisfiable,
                "inequality_feasible": self.inequality_feasible,
                "markov_verdict": self.markov_verdict.value, "agree": self.agree,
                "disagreements": self.disagreements, "details": self.details}


def inequality_check(bundle, tol):
    """Route (b): reduced positivity conditions over the whole {0,1}^V box.

    Returns (feasible masks as a boolean table, per-mask off-diagonal minima,
    margin of the m-independent second condition).
    """
    Q, B = bundle.Q, bundle.B
    minima = kernels.box_offdiag_minima(np.ascontiguousarray(Q), np.ascontiguousarray(B))
    d = Q.shape[0]
    M2 = np.diag(np.diag(Q)) + np.where(np.eye(d, dtype=bool), 0.0, bundle.P)
    ccp2 = min_eig_hermitian(M2, project=np.ones(d) / math.sqrt(d))
    return (minima >= -tol) & (ccp2 >= -tol), minima, ccp2


def verify_reduction(inst, tol=None, bundle=None, kappa=KAPPA):
    """Cross-check SAT (a), reduced inequalities (b) and Markovianity of E (c)."""
    _check_caps(inst)
    tol = default_tolerance(inst, kappa) if tol is None else tol
    bundle = build_reduction(inst) if bundle is None else bundle
    sat = sat_brute_force(inst)
    table = kernels.exactly_one_table(inst.clause_masks(), inst.num_vars)
    feasible, minima, ccp2 = inequality_check(bundle, tol)
    # route (c): the branches are the constructed family restricted to {0,1}^V;
    # E is far too contractive for its own spectrum to be resolved in floats
    report_c = decide_markovian(bundle.E, tol, branch_bound=1, family=bundle.family(),
                                candidates=_binary_box(inst.num_vars), require_cpt=False)
    rep = VerificationReport(inst, tol, sat, bool(feasible.any()), report_c.verdict)
    rep.details = {
        "filtering_margin": bundle.metadata.get("filtering_margin"),
        "ccp2_margin": ccp2,
        "best_offdiag_minimum": float(minima.max()),
        "markov_witness_m": list(report_c.witness_m) if report_c.witness_m else None,
        "markov_conditions": report_c.conditions.as_dict() if report_c.conditions else None,
        "cpt_check": bundle.metadata.get("cpt_check"),
        "s_big": str(bundle.S.s_big), "sigma": str(bundle.sigma),
    }
    if rep.inequality_feasible != sat.satisfiable:
        rep.disagreements.append("reduced inequalities disagree with brute-force SAT")
    if not np.array_equal(feasible, table):
        bad = [int(x) for x in np.flatnonzero(feasible != table)]
        rep.disagreements.append(f"feasible assignment set differs from SAT solutions at masks {bad}")
    if report_c.verdict is not rep.expected_verdict:
        rep.disagreements.append(
            f"decide_markovian says {report_c.verdict.value}, SAT says "
            f"{'satisfiable' if sat.satisfiable else 'unsatisfiable'}")
    if report_c.witness_m is not None and not inst.satisfied_by(report_c.witness_m):
        rep.disagreements.append(f"Markovian witness m={report_c.witness_m} is not a SAT solution")
    return rep


def classical_reduction(inst):
    """Rate-matrix form of the encoding: (Q, B) from the same construction."""
    b = build_reduction(inst, emit=False)
    return b.Q, b.B


@dataclass
class ClassicalVerificationReport:
    instance: SatInstance
    sat: SatResult
    feasible_masks: list
    tolerance: float

    @property
    def feasible(self):
        return bool(self.feasible_masks)

    @property
    def agree(self):
        return self.feasible == self.sat.satisfiable

    def as_dict(self):
        return {"sat": str(self.sat), "feasible": self.feasible, "agree": self.agree,
                "feasible_masks": self.feasible_masks, "tolerance": self.tolerance}


def verify_classical_reduction(inst, tol=None):
    _check_caps(inst)
    tol = default_tolerance(inst) if tol is None else tol
    Q, B = classical_reduction(inst)
    masks = []
    for m in _binary_box(inst.num_vars):
        L = Q + np.tensordot(np.asarray(m, dtype=float), B, axes=1) if len(B) else Q
        if check_classical_generator(L, tol).verdict(tol):
            masks.append(_tuple_to_mask(m))
    return ClassicalVerificationReport(inst, sat_brute_force(inst), sorted(masks), tol)


# ------------------------------------------------------------------ corpus

CANONICAL_UNSAT = SatInstance(5, ((1, 2, 3), (1, 2, 4), (3, 4, 5), (1, 2, 5)))


def _canonical(num_vars, clauses):
    best = None
    for perm in itertools.permutations(range(1, num_vars + 1)):
        key = tuple(sorted(tuple(sorted(perm[v - 1] for v in cl)) for cl in clauses))
        if best is None or key < best:
            best = key
    return best


def corpus(max_vars=5, max_clauses=4):
    """All monotone instances (distinct clauses) up to variable relabeling,
    plus the canonical unsatisfiable instance; deterministic order."""
    out, seen = [], set()
    for V in range(1, max_vars + 1):
        triples = list(itertools.combinations(range(1, V + 1), 3))
        for C in range(0, max_clauses + 1):
            for clauses in itertools.combinations(triples, C):
                key = (V, _canonical(V, clauses))
                if key not in seen:
                    seen.add(key)
                    out.append(SatInstance(V, key[1]))
    # the canonical unsatisfiable instance is listed in its literal labeling
    key = (CANONICAL_UNSAT.num_vars, _canonical(CANONICAL_UNSAT.num_vars, CANONICAL_UNSAT.clauses))
    rep = next((i for i, inst in enumerate(out) if (inst.num_vars, inst.clauses) == key), None)
    if rep is None:
        out.append(CANONICAL_UNSAT)
    else:
        out[rep] = CANONICAL_UNSAT
    return out


def worker_count():
    try:
        n = int(os.environ.get("GENFINDER_THREADS", "0"))
    except ValueError:
        n = 0
    return max(1, n or (os.cpu_count() or 1))


def verify_corpus(instances=None, kappa=KAPPA, threads=None, classical=False):
    """Verify every instance; results are returned in input order."""
    instances = corpus() if instances is None else list(instances)
    fn = ((lambda i: verify_classical_reduction(i, default_tolerance(i, kappa))) if classical
          else (lambda i: verify_reduction(i, kappa=kappa)))
    threads = worker_count() if threads is None else threads
    if threads <= 1:
        return [fn(i) for i in instances]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, instances))


# ------------------------------------------------------------------ export

def _fraction_str(x):
    return str(Fraction(x))


def export_bundle(bundle, out_dir, expected=None):
    """Write matrices as JSON files plus ``manifest.json``."""
    os.makedirs(out_dir, exist_ok=True)
    inst = bundle.instance
    files = {}

    def put(name, M, kind="classical"):
        fname = f"{name}.json"
        write_json_atomic(os.path.join(out_dir, fname), {"name": name, "matrix": encode_matrix(M, kind)})
        files[name] = fname

    put("S", bundle.S.as_float())
    put("v", bundle.vectors.v)
    if bundle.vectors.vprime.size:
        put("vprime", bundle.vectors.vprime)
    put("Q", bundle.Q)
    put("P", bundle.P)
    for c, Bc in enumerate(bundle.B, start=1):
        put(f"B_{c}", Bc)
    put("L0", bundle.L0, "quantum")
    for c, A in enumerate(bundle.A, start=1):
        put(f"A_{c}", A, "quantum")
    if bundle.E is not None:
        write_json_atomic(os.path.join(out_dir, "E.json"),
                          {"kind": "quantum", "dim": bundle.d, "convention": "transfer-rowmajor-v1",
                           "matrix": encode_matrix(bundle.E.matrix)})
        files["E"] = "E.json"
    sat = sat_brute_force(inst)
    manifest = {
        "format": "reduction-bundle-v1",
        "instance": {"num_vars": inst.num_vars, "clauses": [list(c) for c in inst.clauses],
                     "text": inst.to_text()},
        "sigma": _fraction_str(bundle.sigma), "k": _fraction_str(bundle.k),
        "alpha": _fraction_str(bundle.alpha), "s_big": _fraction_str(bundle.S.s_big),
        "S_exact": [[_fraction_str(x) for x in row] for row in bundle.S.exact],
        "N": bundle.vectors.N, "n": bundle.n, "d": bundle.d,
        "tolerance": default_tolerance(inst),
        "balancing_retries": bundle.balancing_retries,
        "filtering_margin": bundle.metadata.get("filtering_margin"),
        "cpt_check": bundle.metadata.get("cpt_check"),
        "sat": str(sat),
        "expected_verdict": (expected or (Verdict.MARKOVIAN if sat.satisfiable
                                          else Verdict.NON_MARKOVIAN)).value,
        "encoding_inequalities": [str(q) for q in extract_encoding_inequalities(bundle)],
        "files": files,
    }
    write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def branch_closure_residual(bundle, m):
    """``|exp(L0 + sum m_c A_c) - E|_F``."""
    return frob(mat_exp(bundle.branch(m)) - bundle.E.matrix)


def conditions_of(bundle, m):
    return check_conditions(bundle.branch(m))
