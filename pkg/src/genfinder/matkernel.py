"""Dense (and block-sparse) complex matrix kernel.

Index convention, fixed for the whole package: a linear map on d x d matrices
is stored as its *transfer matrix* acting on row-major vectorised inputs, so
entry ``T[(i, j), (k, l)] = <i| T(|k><l|) |j>`` with double index ``(a, b)``
flattened to ``a * d + b``.  The identity map is the identity matrix and map
composition is matrix multiplication, so exp/log/powers compose as expected.

Algorithms
----------
* Eigendecomposition: LAPACK ``zgeev`` via :func:`numpy.linalg.eig` (Hessenberg
  reduction followed by implicitly shifted QR).  Left eigenvectors are taken as
  the rows of the inverse right-eigenvector matrix, which makes the pair
  biorthogonal with ``<r_c|l_c> = 1`` by construction.
* Exponential: scaling and squaring with a degree-13 Pade approximant
  (:func:`scipy.linalg.expm`).
* Principal logarithm: eigendecomposition-based for diagonalizable input
  (``method="eig"``, the default); inverse scaling and squaring on the Schur
  form (:func:`scipy.linalg.logm`) for ``method="schur"`` and as fallback when
  the eigenvector basis is too ill-conditioned.  The two paths are
  cross-validated in the test-suite.

Large matrices that are block diagonal up to a permutation (the reduction
module produces such matrices with tens of millions of entries, nearly all
zero) are handled per connected block of their sparsity pattern.  Both
``numpy`` arrays and ``scipy.sparse`` arrays are accepted where noted.
"""
from dataclasses import dataclass
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (DegenerateSpectrum, LogUndefined, NonDiagonalizable, NotHermitian,
                     NotSquareOfSquare, Overflow)

DEFAULT_TOL = 1e-8
# scaling and squaring needs ~log2(norm) squarings; beyond this the result is noise
EXP_NORM_CAP = 1e6
# above this size dense kernels first look for a block structure
BLOCK_THRESHOLD = 256


def is_sparse(M):
    return sp.issparse(M)


def to_dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def hilbert_dim(n):
    """Return d for a matrix dimension n = d**2."""
    d = math.isqrt(n)
    if d * d != n:
        raise NotSquareOfSquare(f"dimension {n} is not a perfect square")
    return d


def _check_square(M):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")


def frob(M):
    if sp.issparse(M):
        return float(sp.linalg.norm(M)) if M.nnz else 0.0
    return float(np.linalg.norm(M))


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray
    right: np.ndarray   # columns |l_c>
    left: np.ndarray    # rows <r_c|
    biorthogonality_residual: float
    reconstruction_residual: float

    def reconstruct(self):
        return (self.right * self.eigenvalues) @ self.left


def _min_separation(vals, scale):
    if vals.size < 2:
        return np.inf
    diff = np.abs(vals[:, None] - vals[None, :])
    np.fill_diagonal(diff, np.inf)
    return diff.min() / scale


def eig_decompose(M, tol=DEFAULT_TOL, *, check_degenerate=True):
    """Biorthogonal eigendecomposition ``M = sum_c lambda_c |l_c><r_c|``.

    Raises DegenerateSpectrum when two eigenvalues are closer than
    ``tol * max(1, max|lambda|)`` (unless ``check_degenerate`` is false), and
    NonDiagonalizable when the reconstruction residual exceeds ``tol * |M|``.
    """
    M = to_dense(M).astype(complex)
    _check_square(M)
    vals, right = np.linalg.eig(M)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if check_degenerate and _min_separation(vals, scale) <= tol:
        raise DegenerateSpectrum(
            f"eigenvalues separated by less than {tol:g} (relative); branch parametrisation undefined")
    try:
        left = np.linalg.inv(right)
    except np.linalg.LinAlgError as exc:
        raise NonDiagonalizable("eigenvector matrix is singular") from exc
    if not np.all(np.isfinite(left)):
        raise NonDiagonalizable("eigenvector matrix is singular")
    n = M.shape[0]
    bi = float(np.linalg.norm(left @ right - np.eye(n)))
    rec = float(np.linalg.norm((right * vals) @ left - M))
    if rec > tol * max(1.0, float(np.linalg.norm(M))) or bi > math.sqrt(tol):
        raise NonDiagonalizable(
            f"reconstruction residual {rec:.3g} / biorthogonality residual {bi:.3g} too large")
    return EigenSystem(vals, right, left, bi, rec)


def components(M, extra_links=None):
    """Connected components of the symmetric sparsity pattern of ``M``.

    ``extra_links`` is an optional index array forced into one component.
    Returns a list of sorted index arrays, ordered by their smallest index.
    """
    n = M.shape[0]
    A = sp.coo_array(M) if sp.issparse(M) else sp.coo_array(np.asarray(M) != 0)
    rows, cols = A.row, A.col
    if extra_links is not None and len(extra_links) > 1:
        links = np.asarray(extra_links)
        rows = np.concatenate([rows, links[:-1]])
        cols = np.concatenate([cols, links[1:]])
    G = sp.coo_array((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(G, directed=True, connection="weak")
    order = np.argsort(labels, kind="stable")
    cuts = np.flatnonzero(np.diff(labels[order])) + 1
    groups = np.split(order, cuts)
    groups.sort(key=lambda g: g[0])
    return groups


def _blockwise(M, fn, dtype=complex):
    """Apply a dense matrix function per block; returns a csr_array."""
    Ms = sp.csr_array(M)
    rows, cols, vals = [], [], []
    for idx in components(Ms):
        block = fn(Ms[idx][:, idx].toarray())
        r, c = np.nonzero(block)
        rows.append(idx[r])
        cols.append(idx[c])
        vals.append(block[r, c])
    n = M.shape[0]
    return sp.csr_array((np.concatenate(vals).astype(dtype), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))


def _expm_dense(M):
    norm1 = float(np.abs(M).sum(axis=0).max(initial=0.0))
    if not np.isfinite(norm1) or norm1 > EXP_NORM_CAP:
        raise Overflow(f"1-norm {norm1:.3g} exceeds the exponential cap {EXP_NORM_CAP:g}")
    if norm1 == 0.0:
        return np.eye(M.shape[0], dtype=M.dtype)
    out = scipy.linalg.expm(M)
    if not np.all(np.isfinite(out)):
        raise Overflow("matrix exponential overflowed")
    return out


def mat_exp(M):
    """Matrix exponential.  Sparse input is exponentiated block by block and
    returned as a ``csr_array``; the zero matrix maps exactly to the identity."""
    if sp.issparse(M):
        _check_square(M)
        return _blockwise(M, _expm_dense)
    M = np.asarray(M)
    _check_square(M)
    if M.shape[0] > BLOCK_THRESHOLD:
        groups = components(M)
        if len(groups) > 1:
            return _blockwise(M, _expm_dense).toarray()
    return _expm_dense(M)


def _log_domain_check(vals, tol):
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    for v in vals:
        if abs(v) <= tol * scale:
            raise LogUndefined(f"eigenvalue {v:.3g} is within tolerance of zero", eigenvalue=v)
        if v.real < 0 and abs(v.imag) <= tol * scale:
            lone = int(np.sum(np.abs(vals - v) <= math.sqrt(tol) * scale)) == 1
            raise LogUndefined(f"eigenvalue {v:.6g} lies on the negative real axis",
                               eigenvalue=v, lone=lone)


def _maybe_real(L, was_real):
    if was_real and np.abs(L.imag).max(initial=0.0) <= 1e3 * np.finfo(float).eps * max(1.0, np.abs(L).max()):
        return L.real.copy()
    return L


def mat_log_principal(M, tol=DEFAULT_TOL, method="eig"):
    """Principal matrix logarithm (eigenvalue imaginary parts in (-pi, pi]).

    Real input with a real principal logarithm returns a real array.
    Raises LogUndefined when an eigenvalue is within ``tol`` (relative) of
    the closed negative real axis.
    """
    M = to_dense(M)
    _check_square(M)
    was_real = not np.iscomplexobj(M)
    Mc = M.astype(complex)
    if method not in ("eig", "schur"):
        raise ValueError(f"unknown method {method!r}")
    vals, right = np.linalg.eig(Mc)
    _log_domain_check(vals, tol)
    if method == "eig":
        try:
            left = np.linalg.inv(right)
            rec = np.linalg.norm((right * vals) @ left - Mc)
            if np.isfinite(rec) and rec <= tol * max(1.0, np.linalg.norm(Mc)):
                return _maybe_real((right * np.log(vals)) @ left, was_real)
        except np.linalg.LinAlgError:
            pass
    L = scipy.linalg.logm(Mc)
    return _maybe_real(np.asarray(L, dtype=complex), was_real)


def gamma_reshuffle(M):
    """``|i,j><k,l|  ->  |i,k><j,l|`` extended linearly (an involution).

    Under the transfer convention this maps a map's transfer matrix to its
    Choi matrix with the output factor first.
    """
    n = M.shape[0]
    d = hilbert_dim(n)
    if M.shape != (n, n):
        raise NotSquareOfSquare(f"expected a square matrix, got {M.shape}")
    if sp.issparse(M):
        A = sp.coo_array(M)
        i, j = np.divmod(A.row, d)
        k, l = np.divmod(A.col, d)
        return sp.csr_array((A.data, (i * d + k, j * d + l)), shape=(n, n))
    return np.asarray(M).reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(n, n)


def flip_op(M):
    """``|i,j><k,l|  ->  (|j,i><l,k|)^*`` extended linearly (an involution).

    A transfer matrix is Hermiticity preserving iff it is a fixed point.
    """
    n = M.shape[0]
    d = hilbert_dim(n)
    if M.shape != (n, n):
        raise NotSquareOfSquare(f"expected a square matrix, got {M.shape}")
    if sp.issparse(M):
        A = sp.coo_array(M)
        i, j = np.divmod(A.row, d)
        k, l = np.divmod(A.col, d)
        return sp.csr_array((np.conj(A.data), (j * d + i, l * d + k)), shape=(n, n))
    return np.conj(np.asarray(M).reshape(d, d, d, d).transpose(1, 0, 3, 2)).reshape(n, n)


def hermitian_part(M):
    return (M + M.conj().T) / 2


def _project_out(H, w):
    """(I - w w^H) H (I - w w^H) for a unit vector w (dense)."""
    Hw = H @ w
    wH = w.conj() @ H
    c = w.conj() @ Hw
    return H - np.outer(w, wH) - np.outer(Hw, w.conj()) + c * np.outer(w, w.conj())


def min_eig_hermitian(H, project=None):
    """Smallest eigenvalue of the Hermitian matrix ``(I - ww^H) H (I - ww^H)``.

    ``project`` is the unit vector w (``None`` means no projection).  Works per
    connected block for sparse or large inputs; the support of w is kept in a
    single block so the projection stays exact.
    """
    n = H.shape[0]
    if n == 0:
        return np.inf
    w = None if project is None else np.asarray(project, dtype=complex).ravel()
    if not sp.issparse(H) and n <= BLOCK_THRESHOLD:
        Hd = np.asarray(H, dtype=complex)
        if w is not None:
            Hd = _project_out(Hd, w)
        return float(np.linalg.eigvalsh(hermitian_part(Hd))[0])
    support = None if w is None else np.flatnonzero(w)
    groups = components(H, extra_links=support)
    Hs = sp.csr_array(H)
    diag = Hs.diagonal().real
    best = np.inf
    in_support = np.zeros(n, dtype=bool)
    if support is not None:
        in_support[support] = True
    # 1x1 blocks off the support of w are just diagonal entries
    sizes = np.array([g.size for g in groups])
    firsts = np.array([g[0] for g in groups], dtype=np.int64)
    lone = firsts[(sizes == 1) & ~in_support[firsts]]
    best = float(diag[lone].min()) if lone.size else np.inf
    for g in groups:
        has_w = bool(in_support[g].any())
        if g.size == 1 and not has_w:
            continue
        block = Hs[g][:, g].toarray().astype(complex)
        if has_w:
            block = _project_out(block, w[g])
        best = min(best, float(np.linalg.eigvalsh(hermitian_part(block))[0]))
    return best


@dataclass(frozen=True)
class PsdResult:
    positive: bool
    margin: float

    def __bool__(self):
        return self.positive


def psd_check(M, tol=DEFAULT_TOL):
    """Tolerance-aware positive semidefiniteness test.

    ``margin`` is the smallest eigenvalue of the Hermitian part; the matrix is
    reported positive iff ``margin >= -tol``.  Raises NotHermitian when
    ``|M - M^H|_F > tol``.
    """
    asym = frob(M - M.conj().T)
    if asym > tol:
        raise NotHermitian(f"|M - M^H| = {asym:.3g} exceeds tolerance {tol:g}")
    margin = min_eig_hermitian(M)
    return PsdResult(margin >= -tol, margin)
