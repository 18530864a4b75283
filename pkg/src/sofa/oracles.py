"""Brute-force references. Nothing here imports the modules it checks."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr


@dataclass
class OracleReport:
    reference: object = None
    max_abs_error: float = 0.0
    max_rel_error: float = 0.0
    recall: float | None = None
    rank_correlation: float | None = None
    extra: dict = field(default_factory=dict)


def exact_matmul(a, b) -> np.ndarray:
    """Integer matmul with Python ints (no overflow, naive loop order)."""
    a = [[int(v) for v in row] for row in np.asarray(a)]
    b = [[int(v) for v in row] for row in np.asarray(b)]
    n, inner = len(a), len(b)
    m = len(b[0]) if b else 0
    out = np.empty((n, m), dtype=object)
    for i in range(n):
        for j in range(m):
            out[i, j] = sum(a[i][t] * b[t][j] for t in range(inner))
    return out


def exact_topk(row, k: int) -> set[int]:
    """Indices of the k largest values; lower index wins ties."""
    row = [float(v) for v in row]
    order = sorted(range(len(row)), key=lambda i: (-row[i], i))
    return set(order[:max(0, k)])


def recall(selected, row, k: int) -> float:
    truth = exact_topk(row, k)
    if not truth:
        return 1.0
    return len(truth & {int(i) for i in selected}) / len(truth)


def dense_attention(Q, K, V, mask=None, scale=None) -> np.ndarray:
    """Three-pass softmax attention, one row at a time with ``math.fsum``.

    ``mask`` is either a boolean T x S array or a list of index collections.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    T, d = Q.shape
    sc = 1.0 / math.sqrt(d) if scale is None else scale
    out = np.zeros((T, V.shape[1]))
    for i in range(T):
        if mask is None:
            cols = range(len(K))
        elif isinstance(mask, np.ndarray) and mask.dtype == bool:
            cols = np.flatnonzero(mask[i])
        else:
            cols = sorted(int(c) for c in mask[i])
        cols = list(cols)
        if not cols:
            continue
        s = [sc * math.fsum(Q[i, t] * K[c, t] for t in range(d)) for c in cols]
        mx = max(s)
        w = [math.exp(v - mx) for v in s]
        z = math.fsum(w)
        for h in range(V.shape[1]):
            out[i, h] = math.fsum(w[j] * V[c, h] for j, c in enumerate(cols)) / z
    return out


def relative_error(approx, ref) -> float:
    approx = np.asarray(approx, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    denom = np.linalg.norm(ref)
    if denom == 0:
        return float(np.linalg.norm(approx))
    return float(np.linalg.norm(approx - ref) / denom)


def max_relative_error(approx, ref, floor: float = 1e-12) -> float:
    approx = np.asarray(approx, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    scale = max(float(np.abs(ref).max()) if ref.size else 0.0, floor)
    return float(np.abs(approx - ref).max() / scale) if ref.size else 0.0


def log_product(x: int, y: int, W: int = 8) -> int:
    """Scalar shift-and-add product estimate, written from the definition:
    |x| times the smallest power of two above |y|, with XOR sign."""
    if x == 0 or y == 0:
        return 0
    max_mag = (1 << (W - 1)) - 1
    mx, my = min(abs(x), max_mag), min(abs(y), max_mag)
    p = 1
    while p <= my:
        p *= 2
    mag = mx * p
    return -mag if (x < 0) != (y < 0) else mag


def lz_error_table(W: int = 8, *, include_saturated: bool = False) -> dict:
    """Exhaustive ratio statistics of the log-domain product over all
    W-bit operand pairs (zero pairs excluded).

    By default the sweep covers the sign-magnitude range; the two's
    complement minimum (which saturates to the largest magnitude) joins
    only with ``include_saturated``.
    """
    lo, hi = -(1 << (W - 1)) + (0 if include_saturated else 1), (1 << (W - 1)) - 1
    ratios = []
    sign_ok = 0
    pairs = 0
    for x in range(lo, hi + 1):
        if x == 0:
            continue
        for y in range(lo, hi + 1):
            if y == 0:
                continue
            a = log_product(x, y, W)
            e = x * y
            pairs += 1
            sign_ok += (a > 0) == (e > 0)
            ratios.append(a / e)
    r = np.array(ratios)
    return {"pairs": pairs, "min_ratio": float(r.min()), "max_ratio": float(r.max()),
            "mean_ratio": float(r.mean()), "sign_correct": sign_ok}


def rank_correlation(a, b) -> float:
    rho = spearmanr(a, b)[0]
    return float(rho) if np.isfinite(rho) else 0.0


def grid_minimum(axes: list[list], objective) -> tuple[tuple, float]:
    """Exhaustive minimum over the product of ``axes``."""
    best, best_val = None, math.inf
    for point in itertools.product(*axes):
        v = objective(point)
        if v < best_val:
            best, best_val = point, v
    return best, best_val
