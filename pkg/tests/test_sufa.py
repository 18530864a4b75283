import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sofa.core import OpTally
from sofa.oracles import dense_attention
from sofa.sufa import (InputError, SufaState, flash_attention_reference, flash_attention_tally,
                       sufa_ascending, sufa_descending, sufa_tally, vanilla_attention_reference,
                       vanilla_tally)


def _instance(seed, S=40, d=8):
    r = np.random.default_rng(seed)
    return r.normal(size=d), r.normal(size=(S, d)), r.normal(size=(S, 3))


def test_descending_matches_dense_in_sorted_order():
    q, K, V = _instance(0)
    order = np.argsort(-(K @ q), kind="stable")
    res = sufa_descending(q, K[order], V[order])
    ref = dense_attention(q[None], K, V)[0]
    assert np.allclose(res.o, ref, rtol=1e-12, atol=1e-12)
    assert res.corrections == 0
    assert res.tally == sufa_tally(len(K))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 64))
def test_descending_any_order(seed, S):
    q, K, V = _instance(seed, S)
    perm = np.random.default_rng(seed + 1).permutation(S)
    res = sufa_descending(q, K[perm], V[perm])
    assert np.allclose(res.o, dense_attention(q[None], K, V)[0], rtol=1e-9, atol=1e-12)


def test_ascending_order_corrects_every_step():
    q, K, V = _instance(3)
    order = np.argsort(K @ q, kind="stable")
    res = sufa_descending(q, K[order], V[order])
    assert res.corrections == len(K) - 1
    asc = sufa_ascending(q, K[order], V[order])
    assert np.allclose(asc.o, res.o)
    assert asc.tally == sufa_tally(len(K), descending=False)


def test_state_carries_across_blocks():
    q, K, V = _instance(4)
    st = SufaState()
    sufa_descending(q, K[:15], V[:15], state=st, finalize=False)
    res = sufa_descending(q, K[15:], V[15:], state=st, tile_size=8)
    assert np.allclose(res.o, dense_attention(q[None], K, V)[0])


def test_empty_selection_flags_row():
    res = sufa_descending(np.ones(4), np.zeros((0, 4)), np.zeros((0, 2)))
    assert res.empty and not np.any(res.o)


def test_non_finite_rejected():
    q, K, V = _instance(5)
    K[0, 0] = np.nan
    with pytest.raises(InputError):
        sufa_descending(q, K, V)


def test_fc_length_mismatch():
    q, K, V = _instance(6)
    with pytest.raises(InputError):
        sufa_descending(q, K, V, fc=[0, 1])


@pytest.mark.parametrize("variant", ["fa1", "fa2"])
@pytest.mark.parametrize("S,B", [(64, 16), (50, 16), (7, 3)])
def test_flash_references_agree_and_match_closed_form(variant, S, B):
    r = np.random.default_rng(S)
    Q, K, V = r.normal(size=(3, 8)), r.normal(size=(S, 8)), r.normal(size=(S, 4))
    O, t = flash_attention_reference(Q, K, V, B, variant=variant)
    Ov, tv = vanilla_attention_reference(Q, K, V)
    assert np.allclose(O, Ov)
    assert t == flash_attention_tally(3, S, B, variant=variant)
    assert tv == vanilla_tally(3, S)


def test_fa2_excess_exp_is_one_per_tile():
    T, S, B = 5, 64, 16
    excess = flash_attention_tally(T, S, B).exp - vanilla_tally(T, S).exp
    assert excess == T * (S // B)


def test_vanilla_tally_small_case():
    t = vanilla_tally(1, 4)
    assert (t.cmp, t.add, t.exp, t.div, t.vmac, t.vmul) == (3, 7, 4, 1, 4, 1)
