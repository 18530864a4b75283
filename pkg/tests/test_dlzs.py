import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sofa.core import ParameterError, QuantMatrix
from sofa.dlzs import (LZMatrix, clz_array, count_leading_zeros, count_leading_zeros_direct,
                       dlzs_matmul, encode_lz, predict_ahat, predict_khat)
from sofa.oracles import log_product


@pytest.mark.parametrize("W", [8, 16])
def test_composed_clz_matches_direct(W):
    for m in range(1 << (W - 1)):
        assert count_leading_zeros(m, W) == count_leading_zeros_direct(m, W)


def test_clz_examples():
    assert count_leading_zeros(0x40, 8) == 0
    assert count_leading_zeros(1, 8) == 6
    assert count_leading_zeros(0, 8) == 8
    assert count_leading_zeros(1, 16) == 14
    assert count_leading_zeros(0x4000, 16) == 0


def test_clz_array_matches_scalar():
    mags = np.arange(128)
    assert list(clz_array(mags, 8)) == [count_leading_zeros(int(m), 8) for m in mags]


def test_encode_rejects_4_bit():
    with pytest.raises(ParameterError):
        encode_lz(QuantMatrix(np.zeros((2, 2), dtype=np.int64), 4))


def test_reconstruct_is_next_power_of_two():
    m = QuantMatrix(np.array([[5, -1, 0, 64, -127]]), 8)
    lz = encode_lz(m)
    assert list(lz.reconstruct()[0]) == [8, -2, 0, 128, -128]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**31))
def test_matmul_equals_scalar_oracle_sum(n, inner, m, seed):
    r = np.random.default_rng(seed)
    a = r.integers(-127, 128, size=(n, inner))
    b = r.integers(-127, 128, size=(inner, m))
    prod = dlzs_matmul(QuantMatrix(a, 8), encode_lz(QuantMatrix(b, 8)))
    ref = np.array([[sum(log_product(int(a[i, t]), int(b[t, j])) for t in range(inner))
                     for j in range(m)] for i in range(n)])
    out, shift = prod.out.data, prod.shift
    assert np.array_equal(out, np.sign(ref) * (np.abs(ref) >> shift))


def test_zero_pairs_are_free():
    a = QuantMatrix(np.array([[0, 3], [2, 0]]), 8)
    b = encode_lz(QuantMatrix(np.array([[1, 0], [0, 4]]), 8))
    t = dlzs_matmul(a, b).tally
    # live pairs: (row0: x=3 with y=4) and (row1: x=2 with y=1)
    assert t.shift == 2 and t.add == 2 and t.mul == 0


def test_inner_dimension_mismatch():
    with pytest.raises(ParameterError):
        dlzs_matmul(QuantMatrix(np.ones((2, 3), dtype=np.int64), 8),
                    encode_lz(QuantMatrix(np.ones((2, 2), dtype=np.int64), 8)))


def test_prediction_ranks_like_exact(small_workload):
    from sofa.oracles import rank_correlation
    wl = small_workload
    khat = predict_khat(wl.X, encode_lz(wl.Wk), wk_scale=wl.Wk.scale)
    ahat = predict_ahat(wl.Q, khat.out)
    assert ahat.out.bit_width == 16 and ahat.out.shape == (16, 128)
    exact = wl.Q.real() @ (wl.exact_keys() * wl.key_scale).T
    rho = np.mean([rank_correlation(ahat.out.data[i], exact[i]) for i in range(16)])
    assert rho >= 0.8


def test_predict_requires_widths(small_workload):
    wl = small_workload
    with pytest.raises(ParameterError):
        predict_khat(wl.Q, encode_lz(wl.Wk))
