"""Differential leading-zero summation (multiplication-free score prediction).

Convention used throughout: an element of a W-bit word is split into sign
and a (W-1)-bit magnitude field. ``lz`` is the leading-zero count of that
field, so the top magnitude bit gives ``lz = 0`` and magnitude 1 gives
``lz = W - 2``. The log-domain scale of a nonzero element is
``2 ** (W - 1 - lz)``, i.e. the smallest power of two strictly above the
magnitude; a product is estimated by shifting the other operand by that
amount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import OpTally, ParameterError, QuantMatrix, requantize, sign_magnitude_array

LZ_FIELD_BITS = {8: 4, 16: 5}


def count_leading_zeros(magnitude: int, W: int) -> int:
    """Leading zeros of ``magnitude`` in a (W-1)-bit field.

    Zero returns the sentinel ``W``. 16-bit inputs go through two chained
    8-bit counters, mirroring the configurable encoder.
    """
    if W == 8:
        return _lzc8(magnitude & 0x7F, width=7) if magnitude else W
    if W == 16:
        if magnitude == 0:
            return W
        hi = (magnitude >> 8) & 0x7F  # top 7 magnitude bits
        lo = magnitude & 0xFF
        hi_zero = hi == 0
        lo_zero = lo == 0
        if hi_zero and lo_zero:
            return W
        # hi counter covers 7 bits; when it is all-zero the lo count is appended
        return 7 + _lzc8(lo, width=8) if hi_zero else _lzc8(hi, width=7)
    raise ParameterError(f"unsupported LZ width {W}")


def _lzc8(value: int, width: int) -> int:
    n = 0
    for bit in range(width - 1, -1, -1):
        if value >> bit & 1:
            return n
        n += 1
    return n


def count_leading_zeros_direct(magnitude: int, W: int) -> int:
    """Reference count via ``int.bit_length``; zero returns ``W``."""
    if magnitude == 0:
        return W
    return (W - 1) - int(magnitude).bit_length()


def clz_array(mags: np.ndarray, W: int) -> np.ndarray:
    mags = np.asarray(mags, dtype=np.int64)
    out = np.full(mags.shape, W, dtype=np.int64)
    nz = mags > 0
    # floor(log2) via frexp is exact for these small integers
    _, exp = np.frexp(mags[nz].astype(np.float64))
    out[nz] = (W - 1) - exp
    return out


@dataclass(frozen=True)
class LZMatrix:
    signs: np.ndarray
    lz: np.ndarray
    zero_flags: np.ndarray
    source_bit_width: int

    @property
    def rows(self) -> int:
        return self.lz.shape[0]

    @property
    def cols(self) -> int:
        return self.lz.shape[1]

    def shifts(self) -> np.ndarray:
        """Shift amount per element (0 where the element is zero)."""
        sh = (self.source_bit_width - 1) - self.lz
        return np.where(self.zero_flags, 0, sh)

    def reconstruct(self) -> np.ndarray:
        """Signed power-of-two value each element stands for."""
        mag = np.where(self.zero_flags, 0, np.left_shift(1, self.shifts()))
        return np.where(self.signs == 1, -mag, mag)


@dataclass(frozen=True)
class PredictionConfig:
    phase1_in_bits: int = 8
    phase1_weight_lz_bits: int = 4
    phase2_in_bits: int = 16
    phase2_lz_bits: int = 5
    truncate_to_bits: int = 16


def encode_lz(m: QuantMatrix) -> LZMatrix:
    if m.bit_width not in LZ_FIELD_BITS:
        raise ParameterError(f"LZ encoding needs 8 or 16 bit input, got {m.bit_width}")
    signs, mags = sign_magnitude_array(m.data, m.bit_width)
    lz = clz_array(mags, m.bit_width)
    zero = mags == 0
    return LZMatrix(signs, lz, zero, m.bit_width)


@dataclass(frozen=True)
class DlzsProduct:
    out: QuantMatrix
    tally: OpTally
    shift: int  # bits dropped by the output truncation


def accumulator_bits(lhs_bits: int, W: int, inner: int) -> int:
    return lhs_bits + W + max(0, math.ceil(math.log2(inner))) if inner > 0 else lhs_bits + W


def dlzs_matmul(lhs: QuantMatrix, rhs_lz: LZMatrix, cfg: PredictionConfig | None = None,
                *, out_scale: float | None = None) -> DlzsProduct:
    """Shift-and-add estimate of ``lhs @ rhs``.

    Each partial product is ``(-1)**(s_x ^ s_y) * (|x| << shift(y))``; pairs
    with a zero operand are skipped and cost nothing. The exact integer sum
    is then truncated toward zero into ``truncate_to_bits``.
    """
    cfg = cfg or PredictionConfig()
    if lhs.cols != rhs_lz.rows:
        raise ParameterError(f"inner dimensions differ: {lhs.cols} vs {rhs_lz.rows}")
    sx, mx = sign_magnitude_array(lhs.data, lhs.bit_width)
    sh = rhs_lz.shifts()
    acc_bits = accumulator_bits(lhs.bit_width, rhs_lz.source_bit_width, lhs.cols)
    if acc_bits > 62:
        raise ParameterError(f"accumulator of {acc_bits} bits exceeds int64")

    live_y = ~rhs_lz.zero_flags
    pos_y = np.where(live_y & (rhs_lz.signs == 0), np.left_shift(1, sh), 0)
    neg_y = np.where(live_y & (rhs_lz.signs == 1), np.left_shift(1, sh), 0)
    signed_x = np.where(sx == 1, -mx, mx)
    # |x| << s == |x| * 2**s exactly; sign = XOR(sx, sy)
    acc = signed_x @ pos_y - signed_x @ neg_y

    nz_x = (mx > 0).astype(np.int64)
    pairs = int((nz_x @ live_y.astype(np.int64)).sum())
    # one shift and one signed add per surviving partial product
    tally = OpTally(shift=pairs, add=pairs)

    out, shift = requantize(acc, cfg.truncate_to_bits)
    scale = (lhs.scale if out_scale is None else out_scale) * (1 << shift)
    return DlzsProduct(QuantMatrix(out, cfg.truncate_to_bits, scale), tally, shift)


def predict_khat(X: QuantMatrix, Wk_lz: LZMatrix, cfg: PredictionConfig | None = None,
                 *, wk_scale: float = 1.0) -> DlzsProduct:
    """Key prediction: 8-bit tokens shifted by pre-encoded weight LZs."""
    cfg = cfg or PredictionConfig()
    if X.bit_width != cfg.phase1_in_bits:
        raise ParameterError(f"tokens must be {cfg.phase1_in_bits}-bit")
    return dlzs_matmul(X, Wk_lz, cfg, out_scale=X.scale * wk_scale)


def predict_ahat(Q: QuantMatrix, Khat: QuantMatrix, cfg: PredictionConfig | None = None) -> DlzsProduct:
    """Attention prediction: Q goes to the log domain, K-hat is shifted.

    Returns a T x S estimate of ``Q @ Khat.T``.
    """
    cfg = cfg or PredictionConfig()
    if Q.bit_width != cfg.phase2_in_bits:
        raise ParameterError(f"queries must be {cfg.phase2_in_bits}-bit")
    if Q.cols != Khat.cols:
        raise ParameterError("Q and K-hat head dims differ")
    q_lz = encode_lz(Q.transpose())  # d x T
    prod = dlzs_matmul(Khat, q_lz, cfg, out_scale=Khat.scale * Q.scale)
    out = prod.out
    return DlzsProduct(QuantMatrix(out.data.T.copy(), out.bit_width, out.scale), prod.tally, prod.shift)


def encoder_tally(m: QuantMatrix) -> OpTally:
    """Cost of running the leading-zero encoder over ``m`` (one cmp-class op per element)."""
    return OpTally(cmp=m.rows * m.cols)
