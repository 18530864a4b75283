"""Sorted-updating online softmax and tiled/vanilla reference counters.

Tally convention: the functions here count the softmax and output-update
datapath. Query-key dot products are counted by the caller. Output
accumulator updates are head_dim-wide and are tallied as vector issues
(``vmac``/``vmul``/``vadd``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import OpTally


class InputError(ValueError):
    """Non-finite or malformed attention inputs."""


@dataclass
class SufaState:
    m: float = -math.inf
    l: float = 0.0
    o: np.ndarray | None = None
    processed: int = 0


@dataclass
class RowResult:
    o: np.ndarray
    tally: OpTally
    corrections: int = 0
    empty: bool = False

    def __iter__(self):
        return iter((self.o, self.tally))


@dataclass
class AttentionResult:
    O: np.ndarray
    row_tallies: list[OpTally] = field(default_factory=list)
    correction_events: int = 0
    empty_rows: list[int] = field(default_factory=list)

    @property
    def tally(self) -> OpTally:
        total = OpTally()
        for t in self.row_tallies:
            total += t
        return total


def _check(q, K, V):
    q = np.asarray(q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64).reshape(-1, q.shape[-1])
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        V = V.reshape(len(K), -1)
    if len(K) != len(V):
        raise InputError("K and V must have the same number of rows")
    for name, a in (("q", q), ("K", K), ("V", V)):
        if not np.all(np.isfinite(a)):
            raise InputError(f"non-finite values in {name}")
    return q, K, V


def _scale(scale, d):
    return 1.0 / math.sqrt(d) if scale is None else float(scale)


def sufa_descending(q_row, K_selected, V_selected, fc=None, scale=None, *,
                    tile_size: int | None = None, state: SufaState | None = None,
                    finalize: bool = True) -> RowResult:
    """Online softmax over keys given in descending predicted-score order.

    The running max is taken from the first (recomputed) score. Each later
    entry costs one subtract, one exp and one add for the denominator plus a
    multiply-accumulate into the output. If an entry beats the running max
    (a misprediction), the accumulators are rescaled and the max replaced.
    ``tile_size`` marks where the comparator mode runs again; passing
    ``state`` continues a row across pipeline tiles.
    """
    q, K, V = _check(q_row, K_selected, V_selected)
    if fc is not None and len(fc) != len(K):
        raise InputError("FCSet length does not match gathered keys")
    tally = OpTally()
    st = state if state is not None else SufaState()
    if st.o is None:
        st.o = np.zeros(V.shape[1] if V.size else 0)
    if len(K) == 0 and st.processed == 0:
        return RowResult(st.o.copy(), tally, 0, empty=True)
    s = _scale(scale, q.shape[0]) * (K @ q)
    corrections = 0
    for j, x in enumerate(s):
        if st.processed == 0 or (tile_size and j % tile_size == 0):
            # comparator mode: refresh the register max at a tile start
            tally.cmp += 1
            if x > st.m:
                if st.processed:
                    factor = math.exp(st.m - x)
                    st.l *= factor
                    st.o *= factor
                    tally.exp += 1
                    tally.mul += 1
                    tally.vmul += 1
                    corrections += 1
                st.m = x
        diff = x - st.m
        tally.add += 1
        if diff > 0:
            # sign of the subtraction flags a mispredicted max
            factor = math.exp(-diff)
            st.l *= factor
            st.o *= factor
            st.m = x
            diff = 0.0
            corrections += 1
            tally.exp += 1
            tally.mul += 1
            tally.vmul += 1
        assert diff <= 0.0
        p = math.exp(diff)
        st.l += p
        st.o += p * V[j]
        tally.exp += 1
        tally.add += 1
        tally.vmac += 1
        st.processed += 1
    if not finalize:
        return RowResult(st.o.copy(), tally, corrections)
    tally.div += 1
    tally.vmul += 1
    return RowResult(st.o / st.l, tally, corrections)


def sufa_ascending(q_row, K_selected, V_selected, fc=None, scale=None) -> RowResult:
    """Online softmax over keys in ascending order: the max is replaced at
    every step, so the denominator needs a rescale multiply each time."""
    q, K, V = _check(q_row, K_selected, V_selected)
    if fc is not None and len(fc) != len(K):
        raise InputError("FCSet length does not match gathered keys")
    tally = OpTally()
    if len(K) == 0:
        return RowResult(np.zeros(V.shape[1] if V.size else 0), tally, empty=True)
    s = _scale(scale, q.shape[0]) * (K @ q)
    m, l = -math.inf, 0.0
    o = np.zeros(V.shape[1])
    for j, x in enumerate(s):
        e = math.exp(m - x)
        l = l * e + 1.0
        o = o * e + V[j]
        m = x
        tally.add += 2
        tally.exp += 1
        tally.mul += 1
        tally.vmac += 1
    tally.div += 1
    tally.vmul += 1
    return RowResult(o / l, tally)


def vanilla_attention_reference(Q, K, V, scale=None) -> tuple[np.ndarray, OpTally]:
    """Three-pass softmax attention with its op tally."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    T, d = Q.shape
    S = len(K)
    sc = _scale(scale, d)
    scores = sc * (Q @ K.T)
    m = scores.max(axis=1, keepdims=True)
    p = np.exp(scores - m)
    O = (p @ V) / p.sum(axis=1, keepdims=True)
    per_row = OpTally(cmp=S - 1, add=S + (S - 1), exp=S, div=1, vmac=S, vmul=1)
    return O, per_row.scaled(T)


def flash_attention_reference(Q, K, V, tile_size: int, scale=None, *,
                              variant: str = "fa2") -> tuple[np.ndarray, OpTally]:
    """Tiled online-softmax attention with per-tile max refresh.

    ``variant="fa2"`` rescales unnormalized accumulators once per tile and
    divides at the end. ``variant="fa1"`` keeps a local tile max, merges two
    rescale factors per tile and renormalizes the output every tile.
    """
    if variant not in ("fa1", "fa2"):
        raise ValueError(f"unknown variant {variant!r}")
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    T, d = Q.shape
    S = len(K)
    B = max(1, int(tile_size))
    sc = _scale(scale, d)
    O = np.zeros((T, V.shape[1]))
    tally = OpTally()
    for i in range(T):
        m, l = -math.inf, 0.0
        o = np.zeros(V.shape[1])
        for lo in range(0, S, B):
            Kt, Vt = K[lo:lo + B], V[lo:lo + B]
            b = len(Kt)
            s = sc * (Kt @ Q[i])
            if variant == "fa2":
                m_new = max(m, float(s.max()))
                e = math.exp(m - m_new)
                p = np.exp(s - m_new)
                l = e * l + p.sum()
                o = e * o + p @ Vt
                m = m_new
                tally += OpTally(cmp=b, add=1 + b + b, exp=1 + b, mul=1, vmul=1, vmac=b)
            else:
                m_t = float(s.max())
                p = np.exp(s - m_t)
                l_t = p.sum()
                m_new = max(m, m_t)
                e1, e2 = math.exp(m - m_new), math.exp(m_t - m_new)
                l_new = e1 * l + e2 * l_t
                o = ((l * e1) * o + e2 * (p @ Vt)) / l_new
                m, l = m_new, l_new
                tally += OpTally(cmp=b, add=b + (b - 1) + 2 + 1, exp=b + 2, mul=3, div=1,
                                 vmac=b, vmul=3, vadd=1)
        if variant == "fa2":
            o = o / l
            tally += OpTally(div=1, vmul=1)
        O[i] = o
    return O, tally


def vanilla_tally(T: int, S: int) -> OpTally:
    """Closed form of the vanilla reference tally."""
    return OpTally(cmp=S - 1, add=2 * S - 1, exp=S, div=1, vmac=S, vmul=1).scaled(T)


def flash_attention_tally(T: int, S: int, tile_size: int, *, variant: str = "fa2") -> OpTally:
    """Closed form of :func:`flash_attention_reference`'s tally."""
    B = max(1, int(tile_size))
    full, rem = divmod(S, B)
    sizes = [B] * full + ([rem] if rem else [])
    row = OpTally()
    for b in sizes:
        if variant == "fa2":
            row += OpTally(cmp=b, add=1 + 2 * b, exp=1 + b, mul=1, vmul=1, vmac=b)
        elif variant == "fa1":
            row += OpTally(cmp=b, add=2 * b + 2, exp=b + 2, mul=3, div=1, vmac=b, vmul=3, vadd=1)
        else:
            raise ValueError(f"unknown variant {variant!r}")
    if variant == "fa2":
        row += OpTally(div=1, vmul=1)
    return row.scaled(T)


def sufa_tally(n: int, *, descending: bool = True) -> OpTally:
    """Per-row tally of a correctly ordered SU-FA pass over ``n`` entries."""
    if n == 0:
        return OpTally()
    if descending:
        return OpTally(cmp=1, add=2 * n, exp=n, vmac=n, div=1, vmul=1)
    return OpTally(add=2 * n, exp=n, mul=n, vmac=n, div=1, vmul=1)
