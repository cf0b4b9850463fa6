"""Hot enumeration loops over boolean assignment boxes.

Each kernel has a numba implementation (``_nb_*``) and a vectorised numpy
implementation (``_np_*``) with identical results.  The public names bind to
the numba versions unless ``GENFINDER_DISABLE_JIT`` is set.

Assignments are encoded as integers: variable ``c`` (0-based) is true iff bit
``c`` is set.  Enumeration always runs in increasing integer order.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

_CHUNK = 1 << 16


@njit
def _popcount(x):
    n = 0
    while x:
        x &= x - 1
        n += 1
    return n


@njit
def _nb_exactly_one_search(clause_masks, num_vars):
    for mask in range(1 << num_vars):
        ok = True
        for cm in clause_masks:
            if _popcount(mask & cm) != 1:
                ok = False
                break
        if ok:
            return mask
    return -1


@njit
def _nb_exactly_one_table(clause_masks, num_vars):
    out = np.ones(1 << num_vars, dtype=np.bool_)
    for mask in range(1 << num_vars):
        for cm in clause_masks:
            if _popcount(mask & cm) != 1:
                out[mask] = False
                break
    return out


@njit
def _nb_box_offdiag_minima(Q, B):
    # Gray-code walk: consecutive masks differ in one bit, so each step adds or
    # subtracts a single B[c] instead of re-summing all active variables.
    nvar, d = B.shape[0], Q.shape[0]
    m = d * d - d
    q = np.empty(m)
    b = np.empty((nvar, m))
    p = 0
    for i in range(d):
        for j in range(d):
            if i != j:
                q[p] = Q[i, j]
                for c in range(nvar):
                    b[c, p] = B[c, i, j]
                p += 1
    out = np.empty(1 << nvar)
    cur = q.copy()
    out[0] = cur.min() if m else np.inf
    gray = 0
    for step in range(1, 1 << nvar):
        c = 0
        while not (step >> c) & 1:
            c += 1
        gray ^= 1 << c
        sign = 1.0 if (gray >> c) & 1 else -1.0
        best = np.inf
        for k in range(m):
            cur[k] += sign * b[c, k]
            if cur[k] < best:
                best = cur[k]
        out[gray] = best
    return out


def _np_popcount(x):
    x = x.astype(np.int64, copy=True)
    n = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        n += x & 1
        x >>= 1
    return n


def _np_exactly_one_ok(masks, clause_masks):
    ok = np.ones(masks.shape, dtype=bool)
    for cm in clause_masks:
        ok &= _np_popcount(masks & cm) == 1
    return ok


def _np_exactly_one_search(clause_masks, num_vars):
    clause_masks = np.asarray(clause_masks, dtype=np.int64)
    total = 1 << num_vars
    for start in range(0, total, _CHUNK):
        masks = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        hit = np.flatnonzero(_np_exactly_one_ok(masks, clause_masks))
        if hit.size:
            return int(masks[hit[0]])
    return -1


def _np_exactly_one_table(clause_masks, num_vars):
    masks = np.arange(1 << num_vars, dtype=np.int64)
    return _np_exactly_one_ok(masks, np.asarray(clause_masks, dtype=np.int64))


def _np_box_offdiag_minima(Q, B):
    nvar, d = B.shape[0], Q.shape[0]
    off = ~np.eye(d, dtype=bool)
    q = Q[off]
    b = B[:, off]
    masks = np.arange(1 << nvar, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(nvar)) & 1).astype(float)
    out = np.empty(masks.size)
    step = max(1, _CHUNK // max(1, q.size // 64))
    for start in range(0, masks.size, step):
        vals = q[None, :] + bits[start:start + step] @ b
        out[start:start + step] = vals.min(axis=1) if q.size else np.inf
    return out


if USE_NUMBA:
    def exactly_one_search(clause_masks, num_vars):
        """Smallest assignment mask satisfying every clause exactly once, or -1."""
        return int(_nb_exactly_one_search(np.asarray(clause_masks, dtype=np.int64), num_vars))

    def exactly_one_table(clause_masks, num_vars):
        return _nb_exactly_one_table(np.asarray(clause_masks, dtype=np.int64), num_vars)

    def box_offdiag_minima(Q, B):
        """For every mask m, min over i != j of ``Q + sum_c m_c B[c]``."""
        return _nb_box_offdiag_minima(np.ascontiguousarray(Q, dtype=float),
                                      np.ascontiguousarray(B, dtype=float))
else:
    exactly_one_search = _np_exactly_one_search
    exactly_one_table = _np_exactly_one_table
    box_offdiag_minima = _np_box_offdiag_minima
