"""End-to-end sparse attention for one head: predict, select, schedule,
generate K/V on demand, then sorted online softmax."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import OpTally, ParameterError, Workload
from .costmodel import (ComputeModel, CostReport, Dims, MemoryModel, OpWeights, dense_tallies,
                        memory_traffic, model_latency, weighted_cost)
from .dlzs import PredictionConfig, encode_lz, encoder_tally, predict_ahat, predict_khat
from .oracles import exact_topk
from .rass import baseline_fetches, build_demand_map, schedule_rass
from .sads import FCRow, FCSet, SadsConfig, sads_rows, segment_bounds
from .sufa import AttentionResult, SufaState, sufa_descending, vanilla_attention_reference


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    segments: int = 4
    k: float = 0.25  # kept fraction of each row
    tile_size: int | None = None  # SU-FA tile width; defaults to S // segments
    r: float = math.inf
    batch_in: int = 12
    keep: int = 4
    dataflow: str = "tiled"
    rass: bool = True
    kv_slots: int = 64  # on-chip KV slots for both schedules
    tile_rows: int = 128
    weights: OpWeights = field(default_factory=OpWeights)
    memory: MemoryModel = field(default_factory=MemoryModel)
    compute: ComputeModel = field(default_factory=ComputeModel)
    prediction: PredictionConfig = field(default_factory=PredictionConfig)

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise ParameterError("k must lie in [0, 1]")
        if self.segments < 1:
            raise ParameterError("segments must be >= 1")
        if self.tile_size is not None and self.tile_size < 1:
            raise ParameterError("tile_size must be >= 1")
        if self.dataflow not in ("tiled", "standard"):
            raise ParameterError(f"unknown dataflow {self.dataflow!r}")
        if self.kv_slots < 1 or self.tile_rows < 1:
            raise ParameterError("kv_slots and tile_rows must be >= 1")

    def kept(self, S: int) -> int:
        return min(S, math.ceil(round(self.k * S, 9)))

    def tile_for(self, S: int) -> int:
        return self.tile_size or max(1, S // max(1, min(self.segments, S)))


@dataclass
class RunSummary:
    attention: AttentionResult
    cost: CostReport
    stage_tallies: dict[str, OpTally]
    fcset: FCSet
    recall: float
    output_error: float
    reductions: dict[str, float]
    kv_fetches: dict[str, int]
    seed: int

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "recall": self.recall,
            "output_error": self.output_error,
            "reductions": self.reductions,
            "kv_fetches": self.kv_fetches,
            "corrections": self.attention.correction_events,
            "empty_rows": self.attention.empty_rows,
            "stage_ops": {s: t.as_dict() for s, t in self.stage_tallies.items()},
            "cost": self.cost.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except (StageError, ParameterError):
                raise
            except Exception as exc:  # pragma: no cover - defensive
                raise StageError(name, exc) from exc
        return inner
    return wrap


@_stage("predict")
def _predict(cfg: PipelineConfig, wl: Workload):
    wk_lz = encode_lz(wl.Wk)  # weights are stored pre-encoded; not tallied
    khat = predict_khat(wl.X, wk_lz, cfg.prediction, wk_scale=wl.Wk.scale)
    ahat = predict_ahat(wl.Q, khat.out, cfg.prediction)
    tally = khat.tally + ahat.tally + encoder_tally(wl.Q)
    return ahat.out.data, tally


@_stage("topk")
def _select(cfg: PipelineConfig, ahat: np.ndarray, kept: int):
    tally = OpTally()
    scfg = SadsConfig(num_segments=cfg.segments, k=kept, r=cfg.r, batch_in=cfg.batch_in,
                      keep=cfg.keep)
    rows: list[FCRow] = []
    # query tiles in order; rows inside a tile are independent
    for lo in range(0, len(ahat), cfg.tile_rows):
        rows += sads_rows(ahat[lo:lo + cfg.tile_rows], scfg, tally=tally).rows
    return FCSet(rows), tally


def _sub_blocks(indices: np.ndarray, S: int, segments: int) -> list[np.ndarray]:
    # segments in ascending index order; predicted order kept inside each
    out = []
    for lo, hi in segment_bounds(S, min(segments, S)):
        blk = indices[(indices >= lo) & (indices < hi)]
        if len(blk):
            out.append(blk)
    return out


@_stage("formal")
def _formal(cfg, wl: Workload, fc: FCSet, K: np.ndarray, V: np.ndarray, segments: int):
    S = wl.spec.seq_len
    Q = wl.Q.real()
    d = Q.shape[1]
    tile = cfg.tile_for(S)
    O = np.zeros((len(Q), V.shape[1]))
    res = AttentionResult(O)
    for i, row in enumerate(fc):
        idx = np.asarray(row.indices, dtype=np.int64)
        tally = OpTally(mul=len(idx) * d, add=len(idx) * d)  # recomputed q.k
        if len(idx) == 0:
            res.empty_rows.append(i)
            res.row_tallies.append(tally)
            continue
        st = SufaState()
        blocks = _sub_blocks(idx, S, segments)
        for b, blk in enumerate(blocks):
            r = sufa_descending(Q[i], K[blk], V[blk], tile_size=tile, state=st,
                                finalize=b == len(blocks) - 1)
            tally += r.tally
            res.correction_events += r.corrections
        O[i] = r.o
        res.row_tallies.append(tally)
    return res


def _weighted(tallies: dict[str, OpTally], w: OpWeights, lanes: int) -> dict[str, float]:
    return {s: weighted_cost(t, w, lanes=lanes) for s, t in tallies.items()}


def run_pipeline(cfg: PipelineConfig, workload: Workload, *, fcset=None) -> RunSummary:
    """Run every stage and compare against the dense reference.

    ``fcset`` (an FCSet or per-query index lists) replaces prediction and
    selection; their stages are then tallied as zero.
    """
    wl = workload
    S, d, T = wl.spec.seq_len, wl.spec.head_dim, wl.spec.num_queries
    H = wl.spec.hidden
    kept = cfg.kept(S)
    stages: dict[str, OpTally] = {}

    if fcset is None:
        ahat, stages["predict"] = _predict(cfg, wl)
        fc, stages["topk"] = _select(cfg, ahat, kept)
        segments = cfg.segments
    else:
        fc = fcset if isinstance(fcset, FCSet) else FCSet(
            [FCRow(np.asarray(r, dtype=np.int64), np.zeros(len(r))) for r in fcset])
        if len(fc) != T:
            raise ParameterError(f"injected FCSet has {len(fc)} rows, workload has {T}")
        stages["predict"] = OpTally()
        stages["topk"] = OpTally()
        segments = 1

    # schedule on-chip KV fetches; both orders see the same slot budget
    sets = fc.index_sets()
    try:
        base_n = baseline_fetches(sets, cfg.kv_slots)
        rass_n = schedule_rass(build_demand_map(sets), cfg.kv_slots).fetches
    except Exception as exc:
        raise StageError("rass", exc) from exc
    fetches = rass_n if cfg.rass else base_n

    # on-demand exact K/V for the selected union only
    union = np.array(sorted({k for s in sets for k in s}), dtype=np.int64)
    K = np.zeros((S, d))
    V = np.zeros((S, d))
    if len(union):
        Xs = wl.X.data[union]
        K[union] = (Xs @ wl.Wk.data) * wl.key_scale
        V[union] = (Xs @ wl.Wv.data) * wl.value_scale
    stages["kvgen"] = OpTally(mul=2 * len(union) * H * d, add=2 * len(union) * H * d)

    att = _formal(cfg, wl, fc, K, V, segments)
    stages["formal"] = att.tally

    # dense reference on the same exact inputs
    Q = wl.Q.real()
    K_full = wl.exact_keys() * wl.key_scale
    V_full = wl.exact_values() * wl.value_scale
    O_ref, _ = vanilla_attention_reference(Q, K_full, V_full)
    err = float(np.linalg.norm(att.O - O_ref) / max(np.linalg.norm(O_ref), 1e-300))
    scores = Q @ K_full.T
    rec = [len(exact_topk(scores[i], kept) & set(sets[i])) / kept for i in range(T)] if kept else [1.0]
    recall = float(np.mean(rec))

    dims = Dims(T, S, d, H, cfg.k, segments, cfg.tile_rows, cfg.tile_for(S))
    reductions = _reductions(stages, dims, cfg.weights)
    traffic = memory_traffic(dims, cfg.memory, cfg.dataflow,
                             kv_fetch_bytes=fetches * H * cfg.memory.token_bytes)
    report = model_latency(stages, traffic, cfg.memory, cfg.dataflow, tiles=dims.tiles,
                           weights=cfg.weights, compute=cfg.compute, lanes=d)
    return RunSummary(att, report, stages, fc, recall, err, reductions,
                      {"rass": rass_n, "baseline": base_n, "used": fetches}, wl.spec.seed)


def _reductions(stages: dict[str, OpTally], dims: Dims, w: OpWeights) -> dict[str, float]:
    """Gross and net weighted-op savings against the dense baseline.

    ``net = dense - sparse - prediction``, with prediction = predict + topk.
    """
    lanes = dims.head_dim
    sp = _weighted(stages, w, lanes)
    dn = _weighted(dense_tallies(dims), w, lanes)
    pred = sp.get("predict", 0.0) + sp.get("topk", 0.0)
    out = {}
    for name, keys in (("attention", ("formal",)), ("attention_qkv", ("formal", "kvgen"))):
        dense = sum(dn[k] for k in keys)
        sparse = sum(sp[k] for k in keys)
        out[f"{name}_dense_ops"] = dense
        out[f"{name}_sparse_ops"] = sparse
        out[f"{name}_gross"] = 1.0 - sparse / dense if dense else 0.0
        out[f"{name}_net_saving"] = dense - sparse - pred
        out[f"{name}_net"] = (dense - sparse - pred) / dense if dense else 0.0
    out["prediction_ops"] = pred
    return out


def compare_dataflows(cfg: PipelineConfig, workload: Workload, *, fcset=None) -> dict[str, CostReport]:
    """Same computation under both accountings."""
    return {df: run_pipeline(replace(cfg, dataflow=df), workload, fcset=fcset).cost
            for df in ("tiled", "standard")}


def config_to_dict(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["r"] = "inf" if math.isinf(cfg.r) else cfg.r
    return d
