"""Weighted op counting, memory traffic and dataflow latency model.

The model is analytic. Compute time of a stage is its weighted op count
divided by that stage's throughput; memory time is DRAM bytes over DRAM
bandwidth plus SRAM bytes over SRAM bandwidth.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

from .core import OpTally, ParameterError
from .sufa import sufa_tally

SCHEMA_VERSION = 1
STAGES = ("predict", "topk", "kvgen", "formal")


@dataclass(frozen=True)
class OpWeights:
    add: float = 1.0
    cmp: float = 1.0
    shift: float = 1.0
    mul: float = 3.0
    exp: float = 10.0
    div: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ParameterError(f"weight {k} must be > 0")


def weighted_cost(tally: OpTally, w: OpWeights | None = None, *, lanes: int = 1) -> float:
    """Dot product of counts and weights.

    Vector issues expand to ``lanes`` scalar ops: ``vmac`` is a mul plus an
    add per lane, ``vmul`` a mul, ``vadd`` an add.
    """
    w = w or OpWeights()
    scalar = (tally.add * w.add + tally.cmp * w.cmp + tally.shift * w.shift
              + tally.mul * w.mul + tally.exp * w.exp + tally.div * w.div)
    vector = lanes * (tally.vmac * (w.mul + w.add) + tally.vmul * w.mul + tally.vadd * w.add)
    return float(scalar + vector)


@dataclass(frozen=True)
class MemoryModel:
    sram_bytes: int = 316 * 1024  # token + weight + temp buffers
    dram_energy_pj_per_bit: float = 15.0
    sram_energy_pj_per_bit: float = 0.1
    dram_bw_gbps: float = 25.6
    sram_bw_tbps: float = 19.0
    score_bytes: float = 2.0  # Pre-Atten / A entries
    pred_bytes: float = 0.5  # 4-bit predicted scores
    index_bytes: float = 2.0
    act_bytes: float = 2.0  # Q, K, V, O entries
    token_bytes: float = 1.0  # X and weights

    def __post_init__(self):
        for k in ("sram_bytes", "dram_bw_gbps", "sram_bw_tbps"):
            if not getattr(self, k) > 0:
                raise ParameterError(f"{k} must be > 0")
        for k in ("dram_energy_pj_per_bit", "sram_energy_pj_per_bit"):
            if getattr(self, k) < 0:
                raise ParameterError(f"{k} must be >= 0")


@dataclass(frozen=True)
class ComputeModel:
    """Weighted ops retired per cycle by each stage's engine, and the clock.

    Defaults follow the accelerator's unit counts: 128x32 shift PEs for
    prediction, 128 sort cores of 16 inputs, 128x4 16-bit PEs for KV
    generation, and 128x4 PEs plus 128 exp and 128 div units for the
    formal stage.
    """

    clock_ghz: float = 1.0
    predict: float = 128 * 32
    topk: float = 128 * 16
    kvgen: float = 128 * 4 * 4.0
    formal: float = 128 * 4 * 4.0 + 128 * 10.0 + 128 * 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ParameterError(f"{k} must be > 0")

    def seconds(self, stage: str, weighted_ops: float) -> float:
        return weighted_ops / (getattr(self, stage) * self.clock_ghz * 1e9)


@dataclass(frozen=True)
class Dims:
    T: int  # queries in flight
    S: int  # keys
    head_dim: int = 64
    model_dim: int = 64
    k: float = 0.25  # kept fraction of each row
    segments: int = 4
    tile_rows: int = 128
    tile_cols: int = 128  # keys per pipeline tile

    @property
    def kept(self) -> int:
        return min(self.S, math.ceil(self.k * self.S)) if self.S else 0

    @property
    def cols(self) -> int:
        return max(1, min(self.tile_cols, self.S)) if self.S else 0

    @property
    def tiles(self) -> int:
        if self.T == 0 or self.S == 0:
            return 0
        return math.ceil(self.T / self.tile_rows) * math.ceil(self.S / self.cols)


INTERMEDIATES = ("pre_atten", "attn", "ahat", "fcset")


def footprint(stage: str, dims: Dims, mem: MemoryModel | None = None) -> float:
    """Bytes held by one intermediate (or a named group) for ``dims``.

    ``"intermediate"`` is the whole-row set a standard flow must hold
    between stages: Pre-Atten and A at 16 bit, predicted scores at 4 bit
    and the FCSet indices.
    """
    mem = mem or MemoryModel()
    T, S = dims.T, dims.S
    if stage == "pre_atten" or stage == "attn":
        return T * S * mem.score_bytes
    if stage == "ahat":
        return T * S * mem.pred_bytes
    if stage == "fcset":
        return T * dims.kept * mem.index_bytes
    if stage == "kv":
        return 2 * S * dims.head_dim * mem.act_bytes
    if stage == "intermediate":
        return sum(footprint(s, dims, mem) for s in INTERMEDIATES)
    if stage == "tile":
        tile = Dims(min(T, dims.tile_rows), dims.cols, dims.head_dim, dims.model_dim,
                    dims.k, 1, dims.tile_rows, dims.cols)
        return footprint("intermediate", tile, mem)
    raise ParameterError(f"unknown footprint stage {stage!r}")


def analytic_stage_tallies(dims: Dims, *, union_fraction: float | None = None) -> dict[str, OpTally]:
    """Closed-form per-stage tallies for the sparse pipeline at ``dims``.

    ``union_fraction`` is the share of keys selected by at least one query;
    by default every key is assumed to be touched when T is large, i.e.
    ``1 - (1 - k) ** T``.
    """
    T, S, d, H = dims.T, dims.S, dims.head_dim, dims.model_dim
    kept = dims.kept
    if union_fraction is None:
        union_fraction = 1.0 - (1.0 - dims.k) ** T if T else 0.0
    U = math.ceil(union_fraction * S)
    predict = OpTally(shift=S * H * d + T * S * d, add=S * H * d + T * S * d, cmp=T * d)
    n = max(1, min(dims.segments, S)) if S else 1
    seg = math.ceil(S / n) if S else 0
    batches = math.ceil(seg / 12) if seg else 0
    # per segment: clip compare on each input, a 16-input merge per batch
    per_row = n * (seg + batches * 16 * 4) + (kept * max(1, math.ceil(math.log2(max(2, kept)))))
    topk = OpTally(cmp=T * per_row if S else 0)
    kvgen = OpTally(mul=2 * U * H * d, add=2 * U * H * d)
    row = sufa_tally(kept)
    formal = OpTally(mul=T * kept * d, add=T * kept * d) + row.scaled(T)
    return {"predict": predict, "topk": topk, "kvgen": kvgen, "formal": formal}


def dense_tallies(dims: Dims) -> dict[str, OpTally]:
    """Dense baseline: full K/V generation, full QK^T and vanilla softmax."""
    from .sufa import vanilla_tally

    T, S, d, H = dims.T, dims.S, dims.head_dim, dims.model_dim
    return {
        "kvgen": OpTally(mul=2 * S * H * d, add=2 * S * H * d),
        "formal": OpTally(mul=T * S * d, add=T * S * d) + (vanilla_tally(T, S) if S else OpTally()),
    }


@dataclass
class Traffic:
    dram_bytes: float = 0.0
    sram_bytes: float = 0.0
    spilled: list[str] = field(default_factory=list)


def memory_traffic(dims: Dims, mem: MemoryModel, dataflow: str, *,
                   kv_fetch_bytes: float | None = None) -> Traffic:
    """DRAM/SRAM bytes for one attention head.

    Both flows read X, the K/V weights and Q and write O. ``kv_fetch_bytes``
    replaces the default token fetch volume when a schedule (RASS or the
    baseline order) has counted it. The standard flow additionally writes
    and re-reads every whole-row intermediate that does not fit beside the
    others in SRAM; the tiled flow does the same only for a tile that does
    not fit.
    """
    if dataflow not in ("standard", "tiled"):
        raise ParameterError(f"unknown dataflow {dataflow!r}")
    T, S, d, H = dims.T, dims.S, dims.head_dim, dims.model_dim
    tokens = S * H * mem.token_bytes if kv_fetch_bytes is None else kv_fetch_bytes
    base = tokens + 2 * H * d * mem.token_bytes + 2 * T * d * mem.act_bytes
    tr = Traffic(dram_bytes=base)
    inter = {s: footprint(s, dims, mem) for s in INTERMEDIATES}
    # every intermediate is written and read once on chip
    tr.sram_bytes = 2 * sum(inter.values()) + base
    if dataflow == "standard":
        free = float(mem.sram_bytes)
        for s in INTERMEDIATES:
            if inter[s] <= free:
                free -= inter[s]
            else:
                tr.spilled.append(s)
                tr.dram_bytes += 2 * inter[s]
    else:
        tile = footprint("tile", dims, mem)
        if tile > mem.sram_bytes:
            warnings.warn("tile footprint exceeds SRAM; spilling intermediates", stacklevel=2)
            tr.spilled = list(INTERMEDIATES)
            tr.dram_bytes += 2 * sum(inter.values())
    return tr


@dataclass
class CostReport:
    dataflow: str
    stage_ops: dict[str, dict[str, int]]
    stage_weighted: dict[str, float]
    weighted_total: float
    dram_bytes: float
    sram_bytes: float
    energy_pj: float
    stage_seconds: dict[str, float]
    compute_seconds: float
    memory_seconds: float
    latency_seconds: float
    mat: float
    spilled: list[str] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def model_latency(stage_costs: dict[str, OpTally], traffic: Traffic, mem: MemoryModel,
                  dataflow: str, *, tiles: int = 1, weights: OpWeights | None = None,
                  compute: ComputeModel | None = None, lanes: int = 64) -> CostReport:
    """Latency, energy and MAT for one accounting.

    Standard: stages run back to back and memory does not overlap compute,
    so latency is their sum and MAT is memory / (memory + compute). Tiled:
    stages overlap per tile, giving ``max stage per-tile time * tiles`` plus
    the fill of the other stages, and memory streams under compute, so
    latency is the larger of the two and MAT is memory time over latency.
    """
    if dataflow not in ("standard", "tiled"):
        raise ParameterError(f"unknown dataflow {dataflow!r}")
    weights = weights or OpWeights()
    compute = compute or ComputeModel()
    w = {s: weighted_cost(t, weights, lanes=lanes) for s, t in stage_costs.items()}
    secs = {s: compute.seconds(s, v) for s, v in w.items()}
    comp = sum(secs.values())
    mem_s = traffic.dram_bytes / (mem.dram_bw_gbps * 1e9) + traffic.sram_bytes / (mem.sram_bw_tbps * 1e12)
    if dataflow == "standard":
        latency = comp + mem_s
        mat = mem_s / latency if latency > 0 else 0.0
    else:
        n = max(1, tiles)
        per_tile = {s: v / n for s, v in secs.items()}
        if per_tile:
            slow = max(per_tile, key=lambda s: (per_tile[s], s))
            pipe = per_tile[slow] * n + sum(v for s, v in per_tile.items() if s != slow)
        else:
            pipe = 0.0
        latency = max(pipe, mem_s)
        mat = mem_s / latency if latency > 0 else 0.0
    energy = 8 * (traffic.dram_bytes * mem.dram_energy_pj_per_bit
                  + traffic.sram_bytes * mem.sram_energy_pj_per_bit)
    return CostReport(
        dataflow=dataflow,
        stage_ops={s: t.as_dict() for s, t in stage_costs.items()},
        stage_weighted=w,
        weighted_total=float(sum(w.values())),
        dram_bytes=float(traffic.dram_bytes),
        sram_bytes=float(traffic.sram_bytes),
        energy_pj=float(energy),
        stage_seconds=secs,
        compute_seconds=comp,
        memory_seconds=mem_s,
        latency_seconds=latency,
        mat=min(1.0, mat),
        spilled=list(traffic.spilled),
    )


def analytic_report(dims: Dims, dataflow: str, *, mem: MemoryModel | None = None,
                    weights: OpWeights | None = None, compute: ComputeModel | None = None) -> CostReport:
    mem = mem or MemoryModel()
    stages = analytic_stage_tallies(dims)
    tr = memory_traffic(dims, mem, dataflow)
    return model_latency(stages, tr, mem, dataflow, tiles=dims.tiles, weights=weights,
                         compute=compute, lanes=dims.head_dim)
