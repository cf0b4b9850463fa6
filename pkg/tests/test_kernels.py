import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genfinder import kernels

PAIRS = [
    (kernels._nb_exactly_one_search, kernels._np_exactly_one_search),
    (kernels._nb_exactly_one_table, kernels._np_exactly_one_table),
]


def brute(clauses, V):
    for mask in range(1 << V):
        if all(bin(mask & cm).count("1") == 1 for cm in clauses):
            return mask
    return -1


clause_lists = st.integers(3, 9).flatmap(lambda V: st.tuples(
    st.just(V),
    st.lists(st.sets(st.integers(0, V - 1), min_size=3, max_size=3), max_size=8)))


@given(clause_lists)
def test_sat_kernels_agree(case):
    V, cls = case
    masks = np.array([sum(1 << v for v in c) for c in cls], dtype=np.int64)
    expected = brute(masks, V)
    assert kernels._nb_exactly_one_search(masks, V) == expected
    assert kernels._np_exactly_one_search(masks, V) == expected
    t_nb = kernels._nb_exactly_one_table(masks, V)
    t_np = kernels._np_exactly_one_table(masks, V)
    assert np.array_equal(t_nb, t_np)
    assert (np.flatnonzero(t_nb)[0] if t_nb.any() else -1) == expected


def test_empty_clause_list():
    masks = np.zeros(0, dtype=np.int64)
    assert kernels.exactly_one_search(masks, 4) == 0
    assert kernels.exactly_one_table(masks, 4).all()


@pytest.mark.parametrize("seed", range(5))
def test_box_minima_agree(seed):
    rng = np.random.default_rng(seed)
    nvar, d = 4, 7
    Q = rng.normal(size=(d, d))
    B = rng.normal(size=(nvar, d, d))
    ref = []
    for mask in range(1 << nvar):
        M = Q + sum(B[c] for c in range(nvar) if (mask >> c) & 1)
        ref.append(M[~np.eye(d, dtype=bool)].min())
    assert np.allclose(kernels._nb_box_offdiag_minima(Q, B), ref, atol=1e-12)
    assert np.allclose(kernels._np_box_offdiag_minima(Q, B), ref, atol=1e-12)


def test_env_flag_selects_fallback(monkeypatch):
    import importlib
    from genfinder import _jit
    monkeypatch.setenv("GENFINDER_DISABLE_JIT", "1")
    try:
        importlib.reload(_jit)
        mod = importlib.reload(kernels)
        assert not mod.USE_NUMBA
        assert mod.exactly_one_search is mod._np_exactly_one_search
    finally:
        monkeypatch.delenv("GENFINDER_DISABLE_JIT")
        importlib.reload(_jit)
        importlib.reload(kernels)
