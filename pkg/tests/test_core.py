import numpy as np
import pytest
from hypothesis import given, strategies as st

from sofa.core import (Distribution, OpTally, ParameterError, QuantMatrix, WorkloadSpec,
                       from_sign_magnitude, generate_workload, requantize, to_sign_magnitude)


def test_quantmatrix_rejects_bad_width_and_range():
    with pytest.raises(ParameterError):
        QuantMatrix(np.zeros((2, 2), dtype=np.int64), 12)
    with pytest.raises(ParameterError):
        QuantMatrix(np.array([[128]]), 8)
    with pytest.raises(ParameterError):
        QuantMatrix(np.zeros((2, 2)), 8)  # float data


def test_quantmatrix_is_read_only():
    m = QuantMatrix(np.array([[1, -2]]), 8)
    with pytest.raises(ValueError):
        m.data[0, 0] = 3
    assert m.transpose().shape == (2, 1)


@given(st.integers(-127, 127))
def test_sign_magnitude_round_trip(x):
    s, m = to_sign_magnitude(x, 8)
    assert from_sign_magnitude(s, m) == x


def test_sign_magnitude_saturates_minimum():
    assert to_sign_magnitude(-128, 8) == (1, 127)


@given(st.lists(st.integers(-(1 << 40), 1 << 40), min_size=1, max_size=20))
def test_requantize_fits_and_truncates_toward_zero(vals):
    acc = np.array(vals, dtype=np.int64)
    out, shift = requantize(acc, 16)
    assert np.abs(out).max() <= 32767
    assert np.array_equal(out, np.sign(acc) * (np.abs(acc) >> shift))


def test_optally_arithmetic():
    a = OpTally(add=2, exp=1)
    b = OpTally(add=1, vmac=3)
    assert (a + b).as_dict()["add"] == 3
    assert a.scaled(4).exp == 4
    assert OpTally.from_dict((a + b).as_dict()) == a + b


def test_workload_spec_validation():
    with pytest.raises(ParameterError):
        WorkloadSpec(seq_len=0, head_dim=4, num_queries=1)
    with pytest.raises(ParameterError):
        WorkloadSpec(seq_len=8, head_dim=4, num_queries=1, distribution="TypeIV")


def test_generate_workload_deterministic():
    spec = WorkloadSpec(seq_len=64, head_dim=16, num_queries=4, seed=3)
    a, b = generate_workload(spec), generate_workload(spec)
    for x, y in zip(a, b):
        assert np.array_equal(x.data, y.data)
    assert a.X.bit_width == 8 and a.Q.bit_width == 16


def test_type_i_spikes_dominate_rows():
    wl = generate_workload(WorkloadSpec(256, 32, 16, distribution=Distribution.TYPE_I, seed=2))
    scores = wl.Q.real() @ (wl.exact_keys() * wl.key_scale).T
    med = np.median(np.abs(scores), axis=1)
    spike_best = scores[:, list(wl.spikes)].max(axis=1)
    assert np.all(spike_best >= 4 * med)


def test_type_iii_window_recorded():
    wl = generate_workload(WorkloadSpec(256, 32, 8, distribution="TypeIII", cluster_width=16, seed=5))
    lo, hi = wl.window
    assert hi - lo == 16
    scores = wl.Q.real() @ (wl.exact_keys() * wl.key_scale).T
    assert np.all(scores[:, lo:hi].mean(axis=1) > scores.mean(axis=1))
