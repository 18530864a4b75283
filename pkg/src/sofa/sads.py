"""Segmented top-k with iterative batched selection and adaptive clipping."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import OpTally, ParameterError


@dataclass(frozen=True)
class SadsConfig:
    num_segments: int = 4
    k: int = 1
    r: float = math.inf  # top-margin radius; inf disables the margin
    batch_in: int = 12
    keep: int = 4

    def __post_init__(self):
        if self.num_segments < 1:
            raise ParameterError("num_segments must be >= 1")
        if self.k < 0:
            raise ParameterError("k must be >= 0")
        if self.batch_in < 1 or self.keep < 1:
            raise ParameterError("batch_in and keep must be >= 1")
        if self.r < 0:
            raise ParameterError("r must be >= 0")


@dataclass
class ClipState:
    """Threshold-updating state for one segment."""

    running_max: float = -math.inf
    iteration: int = 0
    threshold: float = 0.0

    @property
    def active(self) -> bool:
        return self.iteration > 0


def update_threshold(state: ClipState, new_batch_max: float, output_buffer_min: float,
                     r: float) -> float:
    """Advance one iteration and return the threshold for the next batch.

    A fresh state has threshold 0 and is inactive, so the first batch is
    never clipped.
    """
    state.running_max = max(state.running_max, new_batch_max)
    state.iteration += 1
    state.threshold = max(state.running_max - r, output_buffer_min)
    return state.threshold


def clip(values, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero entries below ``threshold``; returns (values, skipped mask)."""
    v = np.asarray(values, dtype=np.float64).copy()
    skipped = v < threshold
    v[skipped] = 0
    return v, skipped


def _order(idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    # descending value, ascending index on ties
    return np.lexsort((idx, -vals))


def select_topk_segment(scores, m: int, cfg: SadsConfig, *, offset: int = 0,
                        tally: OpTally | None = None) -> list[tuple[int, float]]:
    """Top-``m`` of one segment as (index, score), best first.

    Values stream through in batches of ``batch_in``; each round merges the
    batch with the retained buffer and keeps the best ``max(keep, m)``.
    From the second batch on, values under the threshold are zeroed and
    skipped before they reach the merge.
    """
    vals = np.asarray(scores, dtype=np.float64)
    n = len(vals)
    m = min(m, n)
    if m <= 0:
        return []
    cap = max(cfg.keep, m)
    buf_idx = np.empty(0, dtype=np.int64)
    buf_val = np.empty(0, dtype=np.float64)
    state = ClipState()
    for start in range(0, n, cfg.batch_in):
        b_val = vals[start:start + cfg.batch_in]
        b_idx = np.arange(start, start + len(b_val), dtype=np.int64)
        batch_max = float(b_val.max())
        if state.active:
            _, skipped = clip(b_val, state.threshold)
            if tally is not None:
                tally.cmp += len(b_val)
            b_val, b_idx = b_val[~skipped], b_idx[~skipped]
        if len(b_val):
            m_idx = np.concatenate([buf_idx, b_idx])
            m_val = np.concatenate([buf_val, b_val])
            order = _order(m_idx, m_val)[:cap]
            if tally is not None:
                # comparator count of a merge network over the live inputs
                live = len(m_val)
                tally.cmp += live * max(1, math.ceil(math.log2(live)))
            buf_idx, buf_val = m_idx[order], m_val[order]
        low = float(buf_val[-1]) if len(buf_val) >= cap else -math.inf
        update_threshold(state, batch_max, low, cfg.r)
    order = _order(buf_idx, buf_val)[:m]
    return [(int(buf_idx[i]) + offset, float(buf_val[i])) for i in order]


@dataclass
class FCRow:
    """Selected keys for one query, best predicted score first."""

    indices: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def top1_index(self) -> int | None:
        return int(self.indices[0]) if len(self.indices) else None

    @property
    def top2_index(self) -> int | None:
        return int(self.indices[1]) if len(self.indices) > 1 else None


@dataclass
class FCSet:
    rows: list[FCRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i) -> FCRow:
        return self.rows[i]

    def index_sets(self) -> list[list[int]]:
        return [[int(i) for i in r.indices] for r in self.rows]


def segment_bounds(S: int, n: int) -> list[tuple[int, int]]:
    """Contiguous segments; the last one absorbs the remainder."""
    n = max(1, min(n, S))
    base = S // n
    bounds = [(i * base, (i + 1) * base) for i in range(n - 1)]
    bounds.append(((n - 1) * base, S))
    return bounds


def sads_topk(ahat_row, cfg: SadsConfig, *, tally: OpTally | None = None) -> FCRow:
    row = np.asarray(ahat_row, dtype=np.float64)
    S = len(row)
    k = cfg.k
    if k > S:
        warnings.warn(f"k={k} exceeds row length {S}; clamping", stacklevel=2)
        k = S
    if k == 0 or S == 0:
        return FCRow(np.empty(0, dtype=np.int64), np.empty(0))
    n = min(cfg.num_segments, S)
    quota = math.ceil(k / n)
    picked: list[tuple[int, float]] = []
    for lo, hi in segment_bounds(S, n):
        picked += select_topk_segment(row[lo:hi], quota, cfg, offset=lo, tally=tally)
    idx = np.array([p[0] for p in picked], dtype=np.int64)
    val = np.array([p[1] for p in picked], dtype=np.float64)
    order = _order(idx, val)[:k]
    if tally is not None and len(idx) > 1:
        tally.cmp += len(idx) * math.ceil(math.log2(len(idx)))
    return FCRow(idx[order], val[order])


def sads_rows(ahat: np.ndarray, cfg: SadsConfig, *, tally: OpTally | None = None) -> FCSet:
    return FCSet([sads_topk(r, cfg, tally=tally) for r in np.asarray(ahat)])
