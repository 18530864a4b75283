"""Quantized tensor carriers, op tallies and synthetic workload generation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields

import numpy as np

SUPPORTED_WIDTHS = (4, 8, 16)


class ParameterError(ValueError):
    """Raised for invalid shapes, widths or configuration values."""


def int_range(bit_width: int) -> tuple[int, int]:
    return -(1 << (bit_width - 1)), (1 << (bit_width - 1)) - 1


@dataclass(frozen=True)
class QuantMatrix:
    """Integer matrix with a declared two's-complement width.

    ``scale`` is the real value of one LSB; it only matters for the
    floating-point formal stage.
    """

    data: np.ndarray
    bit_width: int
    scale: float = 1.0

    def __post_init__(self):
        if self.bit_width not in SUPPORTED_WIDTHS:
            raise ParameterError(f"unsupported bit width {self.bit_width}")
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ParameterError("QuantMatrix data must be 2-D")
        if arr.dtype.kind not in "iu":
            raise ParameterError("QuantMatrix data must be integer")
        arr = arr.astype(np.int64)
        lo, hi = int_range(self.bit_width)
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise ParameterError(f"values outside {self.bit_width}-bit range")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def real(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.scale

    def transpose(self) -> "QuantMatrix":
        return QuantMatrix(self.data.T.copy(), self.bit_width, self.scale)


def to_sign_magnitude(x: int, bit_width: int) -> tuple[int, int]:
    """Split ``x`` into (sign bit, magnitude).

    The most negative two's-complement value saturates to the largest
    magnitude so the magnitude always fits in ``bit_width - 1`` bits.
    """
    x = int(x)
    max_mag = (1 << (bit_width - 1)) - 1
    if x < 0:
        return 1, min(-x, max_mag)
    return 0, x


def from_sign_magnitude(sign: int, magnitude: int) -> int:
    return -magnitude if sign else magnitude


def sign_magnitude_array(a: np.ndarray, bit_width: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`to_sign_magnitude`."""
    a = np.asarray(a, dtype=np.int64)
    max_mag = (1 << (bit_width - 1)) - 1
    signs = (a < 0).astype(np.int64)
    mags = np.minimum(np.abs(a), max_mag)
    return signs, mags


_OP_KINDS = ("add", "cmp", "shift", "mul", "exp", "div", "vmac", "vmul", "vadd")


@dataclass
class OpTally:
    """Operation counts.

    Scalar kinds count one op each. ``vmac``/``vmul``/``vadd`` count issues
    of a head_dim-wide vector op on the output accumulator (multiply-add,
    scale, add); :func:`sofa.costmodel.weighted_cost` expands them by a lane
    count when asked to.
    """

    add: int = 0
    cmp: int = 0
    shift: int = 0
    mul: int = 0
    exp: int = 0
    div: int = 0
    vmac: int = 0
    vmul: int = 0
    vadd: int = 0

    def __add__(self, other: "OpTally") -> "OpTally":
        return OpTally(**{k: getattr(self, k) + getattr(other, k) for k in _OP_KINDS})

    def __iadd__(self, other: "OpTally") -> "OpTally":
        for k in _OP_KINDS:
            setattr(self, k, getattr(self, k) + getattr(other, k))
        return self

    def scaled(self, factor: int) -> "OpTally":
        return OpTally(**{k: getattr(self, k) * factor for k in _OP_KINDS})

    def as_dict(self) -> dict[str, int]:
        return {f.name: int(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "OpTally":
        return cls(**{k: int(d.get(k, 0)) for k in _OP_KINDS})


class Distribution(str, enum.Enum):
    TYPE_I = "TypeI"
    TYPE_II = "TypeII"
    TYPE_III = "TypeIII"


@dataclass(frozen=True)
class WorkloadSpec:
    seq_len: int
    head_dim: int
    num_queries: int
    distribution: Distribution = Distribution.TYPE_II
    dominant_fraction: float = 0.02
    cluster_width: int = 16
    seed: int = 0
    model_dim: int | None = None  # token width H; defaults to head_dim

    def __post_init__(self):
        try:
            object.__setattr__(self, "distribution", Distribution(self.distribution))
        except ValueError as exc:
            raise ParameterError(f"unknown distribution {self.distribution!r}") from exc
        for name in ("seq_len", "head_dim", "num_queries"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.model_dim is not None and self.model_dim < 1:
            raise ParameterError("model_dim must be >= 1")
        if not 0.0 <= self.dominant_fraction <= 1.0:
            raise ParameterError("dominant_fraction must lie in [0, 1]")
        if self.cluster_width < 1:
            raise ParameterError("cluster_width must be >= 1")

    @property
    def hidden(self) -> int:
        return self.model_dim if self.model_dim is not None else self.head_dim


@dataclass(frozen=True)
class Workload:
    """Generated matrices. ``K``/``V`` are 16-bit requantized copies of the
    exact products ``X @ Wk`` / ``X @ Wv``; ``spikes`` and ``window`` record
    where Type-I/III structure was planted."""

    spec: WorkloadSpec
    Q: QuantMatrix
    K: QuantMatrix
    V: QuantMatrix
    X: QuantMatrix
    Wk: QuantMatrix
    Wv: QuantMatrix
    spikes: tuple[int, ...] = ()
    window: tuple[int, int] | None = None
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.Q, self.K, self.V, self.X, self.Wk, self.Wv))

    def exact_keys(self) -> np.ndarray:
        """Exact integer K = X @ Wk (int64)."""
        return self.X.data @ self.Wk.data

    def exact_values(self) -> np.ndarray:
        return self.X.data @ self.Wv.data

    @property
    def key_scale(self) -> float:
        return self.X.scale * self.Wk.scale

    @property
    def value_scale(self) -> float:
        return self.X.scale * self.Wv.scale


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; its output is bit-stable across platforms."""
    return np.random.Generator(np.random.PCG64(seed))


def _uniform(rng: np.random.Generator, shape, bits: int) -> np.ndarray:
    hi = (1 << (bits - 1)) - 1
    return rng.integers(-hi, hi, size=shape, endpoint=True, dtype=np.int64)


def _unit_scale(bits: int) -> float:
    # LSB value giving unit standard deviation for a uniform full-range draw
    return math.sqrt(3.0) / ((1 << (bits - 1)) - 1)


def requantize(acc: np.ndarray, bit_width: int) -> tuple[np.ndarray, int]:
    """Right-shift (toward zero) until every value fits in ``bit_width``.

    Returns the shifted array and the shift amount.
    """
    acc = np.asarray(acc, dtype=np.int64)
    peak = int(np.abs(acc).max()) if acc.size else 0
    shift = max(0, peak.bit_length() - (bit_width - 1))
    out = np.sign(acc) * (np.abs(acc) >> shift)
    return out, shift


def generate_workload(spec: WorkloadSpec) -> Workload:
    """Deterministic synthetic Q/K/V/X/Wk/Wv for one attention head.

    All three distributions draw the same uniform base matrices from the
    seed; Type-I then plants aligned high-magnitude tokens (spikes) and
    Type-III a contiguous window of aligned tokens. Query rows for Type-I/III
    share a common direction so the planted tokens score high on every row.
    """
    if not isinstance(spec, WorkloadSpec):
        raise ParameterError("spec must be a WorkloadSpec")
    rng = make_rng(spec.seed)
    S, d, T, H = spec.seq_len, spec.head_dim, spec.num_queries, spec.hidden

    Wk = _uniform(rng, (H, d), 8)
    Wv = _uniform(rng, (H, d), 8)
    X = _uniform(rng, (S, H), 8)
    Q = _uniform(rng, (T, d), 16)

    spikes: tuple[int, ...] = ()
    window = None
    n_spikes = 0
    if spec.distribution is Distribution.TYPE_I:
        n_spikes = int(round(spec.dominant_fraction * S))
        if spec.dominant_fraction > 0:
            n_spikes = max(1, n_spikes)
    structured = n_spikes > 0 or spec.distribution is Distribution.TYPE_III

    if structured:
        # shared query direction g; every row is g plus bounded noise
        g = _uniform(rng, (d,), 16) // 2
        noise = _uniform(rng, (T, d), 16) // 4
        Q = np.clip(g[None, :] + noise, -32767, 32767)
        direction = np.sign(Wk @ g)
        direction[direction == 0] = 1
        if n_spikes:
            pos = np.sort(rng.choice(S, size=n_spikes, replace=False))
            X[pos] = direction[None, :] * 127
            spikes = tuple(int(p) for p in pos)
        else:
            w = min(spec.cluster_width, S)
            start = int(rng.integers(0, S - w, endpoint=True))
            amp = rng.integers(64, 127, size=(w, H), endpoint=True, dtype=np.int64)
            X[start:start + w] = direction[None, :] * amp
            window = (start, start + w)

    x_scale = _unit_scale(8)
    wk_scale = _unit_scale(8) / math.sqrt(H)
    q_scale = _unit_scale(16)
    Xm = QuantMatrix(X, 8, x_scale)
    Wkm = QuantMatrix(Wk, 8, wk_scale)
    Wvm = QuantMatrix(Wv, 8, wk_scale)
    Qm = QuantMatrix(Q, 16, q_scale)
    k16, ks = requantize(X @ Wk, 16)
    v16, vs = requantize(X @ Wv, 16)
    Km = QuantMatrix(k16, 16, x_scale * wk_scale * (1 << ks))
    Vm = QuantMatrix(v16, 16, x_scale * wk_scale * (1 << vs))
    return Workload(spec, Qm, Km, Vm, Xm, Wkm, Wvm, spikes, window)
