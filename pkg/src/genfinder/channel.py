"""Quantum and classical snapshots: validation, application and JSON I/O.

Snapshot JSON (``convention: transfer-rowmajor-v1``)::

    {"kind": "quantum", "dim": d, "convention": "transfer-rowmajor-v1",
     "matrix": [[[re, im], ...], ...]}          # d**2 x d**2
    {"kind": "classical", "dim": n, "matrix": [[x, ...], ...]}

Large, mostly-zero matrices may instead be written in coordinate form,
``{"format": "coo", "shape": [n, n], "entries": [[i, j, re, im], ...]}``.
Files following the alternative pairing ``E[(i,j),(k,l)] = tr[E(|i><j|) |k><l|]``
use ``convention: paper-eijkl`` and are re-indexed on load.
"""
from dataclasses import dataclass, field
import json
import logging
import os
from pathlib import Path
import tempfile

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, InconsistentSeries, InvalidSnapshot
from .matkernel import (DEFAULT_TOL, flip_op, frob, gamma_reshuffle, hermitian_part, hilbert_dim,
                        min_eig_hermitian, to_dense)

log = logging.getLogger(__name__)

TRANSFER_CONVENTION = "transfer-rowmajor-v1"
PAPER_CONVENTION = "paper-eijkl"
CONVENTIONS = (TRANSFER_CONVENTION, PAPER_CONVENTION)
_COO_DENSITY = 0.1


def omega_vector(d):
    """Maximally entangled unit vector sum_i |i,i> / sqrt(d)."""
    w = np.zeros(d * d)
    w[np.arange(d) * (d + 1)] = 1 / np.sqrt(d)
    return w


@dataclass(frozen=True)
class TransferMatrix:
    """Transfer matrix of a linear map on d x d matrices (dense or sparse)."""
    dim: int
    matrix: object

    def __post_init__(self):
        n = self.dim * self.dim
        if self.matrix.shape != (n, n):
            raise DimensionMismatch(f"transfer matrix of a d={self.dim} map must be {n}x{n}, "
                                    f"got {self.matrix.shape}")
        if not sp.issparse(self.matrix):
            object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=complex))
        if not np.all(np.isfinite(self.matrix.data if sp.issparse(self.matrix) else self.matrix)):
            raise InvalidSnapshot("matrix contains non-finite entries")

    @classmethod
    def from_matrix(cls, M):
        return cls(hilbert_dim(M.shape[0]), M)

    @classmethod
    def identity(cls, d):
        return cls(d, np.eye(d * d, dtype=complex))

    def dense(self):
        return to_dense(self.matrix)


@dataclass(frozen=True)
class StochasticMatrix:
    """Column-stochastic matrix (columns are input states)."""
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix)
        if np.iscomplexobj(M):
            if np.abs(M.imag).max(initial=0.0) > 0:
                raise InvalidSnapshot("stochastic matrix has complex entries")
            M = M.real
        M = M.astype(float)
        if M.shape != (self.dim, self.dim):
            raise DimensionMismatch(f"expected {self.dim}x{self.dim}, got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise InvalidSnapshot("matrix contains non-finite entries")
        object.__setattr__(self, "matrix", M)

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(M.shape[0], M)


@dataclass(frozen=True)
class SnapshotSeries:
    times: tuple
    snapshots: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        snaps = tuple(self.snapshots)
        if not snaps or len(times) != len(snaps):
            raise InconsistentSeries("series needs one time per snapshot and at least one snapshot")
        if any(t <= 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
            raise InconsistentSeries("times must be positive and strictly increasing")
        kinds = {type(s) for s in snaps}
        dims = {s.dim for s in snaps}
        if len(kinds) != 1 or len(dims) != 1:
            raise InconsistentSeries("all snapshots must share kind and dimension")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "snapshots", snaps)

    @property
    def dim(self):
        return self.snapshots[0].dim

    @property
    def kind(self):
        return "quantum" if isinstance(self.snapshots[0], TransferMatrix) else "classical"

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    tolerance: float
    margins: dict = field(default_factory=dict)

    def as_dict(self):
        return {"valid": self.valid, "tolerance": self.tolerance,
                "margins": {k: float(v) for k, v in self.margins.items()}}


def hermiticity_preservation_residual(M):
    return frob(flip_op(M) - M)


def trace_preservation_residual(M, d):
    w = omega_vector(d)
    if sp.issparse(M):
        row = np.asarray(sp.csr_array(M).T @ w).ravel()
    else:
        row = w @ M
    return float(np.linalg.norm(row - w))


def choi_min_eigenvalue(M):
    return min_eig_hermitian(hermitian_part(gamma_reshuffle(M)))


def validate_cpt(T, tol=DEFAULT_TOL):
    """Report Hermiticity preservation, trace preservation and Choi positivity.

    Never raises on invalid input; the verdict is the conjunction at ``tol``.
    """
    M = T.matrix
    hp = hermiticity_preservation_residual(M)
    tp = trace_preservation_residual(M, T.dim)
    cp = choi_min_eigenvalue(M)
    valid = hp <= tol and tp <= tol and cp >= -tol
    return ValidationReport(bool(valid), tol, {"hermiticity_preservation": hp,
                                               "trace_preservation": tp,
                                               "choi_min_eigenvalue": cp})


def validate_stochastic(T, tol=DEFAULT_TOL):
    M = T.matrix
    colsum = float(np.abs(M.sum(axis=0) - 1).max(initial=0.0))
    lo = float(M.min(initial=0.0))
    hi = float(M.max(initial=0.0))
    valid = colsum <= tol and lo >= -tol and hi <= 1 + tol
    return ValidationReport(bool(valid), tol, {"column_sum": colsum, "min_entry": lo,
                                               "max_entry_excess": max(0.0, hi - 1)})


def apply_map(T, rho, tol=DEFAULT_TOL):
    """Apply a transfer matrix to a d x d operator (row-major vectorisation)."""
    rho = np.asarray(rho)
    if rho.shape != (T.dim, T.dim):
        raise DimensionMismatch(f"state must be {T.dim}x{T.dim}, got {rho.shape}")
    if np.linalg.norm(rho - rho.conj().T) > tol or abs(np.trace(rho) - 1) > tol:
        log.warning("apply_map: input is not a Hermitian unit-trace operator")
    out = T.matrix @ rho.reshape(-1)
    return np.asarray(out).reshape(T.dim, T.dim)


def choi_partial_trace_output(M, d):
    """Trace of the Choi matrix over the output factor (identity iff TP)."""
    C = to_dense(gamma_reshuffle(M)).reshape(d, d, d, d)
    return np.einsum("ikil->kl", C)


def paper_to_transfer(E):
    """Re-index ``E[(i,j),(k,l)] = tr[E(|i><j|)|k><l|]`` to the transfer convention.

    That element is ``<l|E(|i><j|)|k>``, i.e. transfer entry ``[(l,k),(i,j)]``.
    """
    n = E.shape[0]
    d = hilbert_dim(n)
    if sp.issparse(E):
        A = sp.coo_array(E)
        i, j = np.divmod(A.row, d)
        k, l = np.divmod(A.col, d)
        return sp.csr_array((A.data, (l * d + k, i * d + j)), shape=(n, n))
    return np.asarray(E).reshape(d, d, d, d).transpose(3, 2, 0, 1).reshape(n, n)


def transfer_to_paper(T):
    n = T.shape[0]
    d = hilbert_dim(n)
    if sp.issparse(T):
        A = sp.coo_array(T)
        l, k = np.divmod(A.row, d)
        i, j = np.divmod(A.col, d)
        return sp.csr_array((A.data, (i * d + j, k * d + l)), shape=(n, n))
    return np.asarray(T).reshape(d, d, d, d).transpose(2, 3, 1, 0).reshape(n, n)


def lift_stochastic(T, coherence=0.0):
    """Quantum channel acting as T on populations; coherences scaled by ``coherence``.

    It is completely positive iff ``coherence <= sqrt(T_ii T_jj)`` for all i != j.
    """
    M = np.asarray(T.matrix if isinstance(T, StochasticMatrix) else T, dtype=float)
    d = M.shape[0]
    E = np.zeros((d * d, d * d), dtype=complex)
    diag = np.arange(d) * (d + 1)
    E[np.ix_(diag, diag)] = M
    off = [i * d + j for i in range(d) for j in range(d) if i != j]
    E[off, off] = coherence
    return TransferMatrix(d, E)


# ---------------------------------------------------------------- JSON

def encode_matrix(M, kind="quantum"):
    """JSON-ready matrix: nested lists, or coordinate form for sparse input."""
    if sp.issparse(M) or (M.size > 4096 and np.count_nonzero(M) < _COO_DENSITY * M.size):
        A = sp.coo_array(M)
        order = np.lexsort((A.col, A.row))
        entries = [[int(r), int(c), float(v.real), float(v.imag)]
                   for r, c, v in zip(A.row[order], A.col[order], A.data[order].astype(complex))]
        return {"format": "coo", "shape": list(A.shape), "entries": entries}
    M = np.asarray(M)
    if kind == "classical":
        return [[float(x) for x in row] for row in np.real(M)]
    M = M.astype(complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def decode_matrix(obj, kind="quantum"):
    if isinstance(obj, dict):
        if obj.get("format") != "coo":
            raise InvalidSnapshot(f"unknown matrix format {obj.get('format')!r}")
        shape = tuple(obj["shape"])
        ent = np.asarray(obj["entries"], dtype=float).reshape(-1, 4)
        data = ent[:, 2] + 1j * ent[:, 3]
        M = sp.csr_array((data, (ent[:, 0].astype(np.int64), ent[:, 1].astype(np.int64))), shape=shape)
        if kind == "classical":
            return M.toarray().real
        return M
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 3 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim == 2:
        return arr if kind == "classical" else arr.astype(complex)
    raise InvalidSnapshot(f"cannot interpret matrix of shape {arr.shape}")


def snapshot_to_dict(snap, convention=TRANSFER_CONVENTION):
    if isinstance(snap, TransferMatrix):
        M = snap.matrix if convention == TRANSFER_CONVENTION else transfer_to_paper(snap.matrix)
        return {"kind": "quantum", "dim": snap.dim, "convention": convention,
                "matrix": encode_matrix(M)}
    return {"kind": "classical", "dim": snap.dim, "matrix": encode_matrix(snap.matrix, "classical")}


def snapshot_from_dict(obj, convention=None):
    """Parse a snapshot dict.  ``convention`` overrides the file's own field."""
    try:
        kind = obj["kind"]
        dim = int(obj["dim"])
        raw = obj["matrix"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSnapshot(f"malformed snapshot: {exc}") from exc
    if kind == "classical":
        return StochasticMatrix(dim, decode_matrix(raw, "classical"))
    if kind != "quantum":
        raise InvalidSnapshot(f"unknown snapshot kind {kind!r}")
    conv = convention or obj.get("convention", TRANSFER_CONVENTION)
    if conv not in CONVENTIONS:
        raise InvalidSnapshot(f"unknown convention {conv!r}")
    M = decode_matrix(raw)
    if conv == PAPER_CONVENTION:
        M = paper_to_transfer(M)
    return TransferMatrix(dim, M)


def series_to_dict(series, convention=TRANSFER_CONVENTION):
    snaps = [snapshot_to_dict(s, convention) for s in series.snapshots]
    return {"kind": f"{series.kind}-series", "dim": series.dim, "convention": convention,
            "snapshots": [{"t": t, **s} for t, s in zip(series.times, snaps)]}


def series_from_dict(obj, convention=None):
    try:
        entries = obj["snapshots"]
        conv = convention or obj.get("convention")
        times = [float(e["t"]) for e in entries]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSnapshot(f"malformed series: {exc}") from exc
    snaps = [snapshot_from_dict(e, conv) for e in entries]
    return SnapshotSeries(tuple(times), tuple(snaps))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidSnapshot(f"{path}: invalid JSON ({exc})") from exc


def write_json_atomic(path, payload):
    """Write JSON through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_snapshot(path, convention=None):
    return snapshot_from_dict(read_json(path), convention)


def save_snapshot(path, snap, convention=TRANSFER_CONVENTION):
    write_json_atomic(path, snapshot_to_dict(snap, convention))


def load_series(path, convention=None):
    return series_from_dict(read_json(path), convention)


def save_series(path, series, convention=TRANSFER_CONVENTION):
    write_json_atomic(path, series_to_dict(series, convention))
