"""Bayesian search over per-layer tile counts and top-k ratios.

A point R holds one (T_c, k) pair per layer; the tile width is
``B_c = S / T_c``. The objective is the accuracy proxy plus two overhead
penalties, one for the sort width (B_c * k relative to S * k) and one for
the number of tiles per row.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from .core import ParameterError, make_rng

TC_OPTIONS: tuple[int, ...] = tuple(range(2, 33, 2))
K_OPTIONS: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 11))

# (alpha, beta) presets
PRESETS: dict[str, tuple[float, float]] = {
    "bert-b": (0.24, 0.31),
    "bert-l": (0.24, 0.31),
}

Point = tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class SearchSpace:
    seq_lens: tuple[int, ...]  # one entry per layer
    tc_options: tuple[int, ...] = TC_OPTIONS
    k_options: tuple[float, ...] = K_OPTIONS
    tie_k: bool = False  # one k shared by all layers

    def __post_init__(self):
        if not self.seq_lens:
            raise ParameterError("search space needs at least one layer")
        if any(s < 1 for s in self.seq_lens):
            raise ParameterError("sequence lengths must be >= 1")

    @property
    def layers(self) -> int:
        return len(self.seq_lens)

    def axes(self) -> list[tuple]:
        ax: list[tuple] = [self.tc_options] * self.layers
        if self.tie_k:
            ax.append(self.k_options)
        else:
            ax += [self.k_options] * self.layers
        return ax

    @property
    def size(self) -> int:
        return math.prod(len(a) for a in self.axes())

    def to_point(self, coords: Sequence) -> Point:
        L = self.layers
        tcs = coords[:L]
        ks = [coords[L]] * L if self.tie_k else coords[L:]
        return tuple((int(t), float(k)) for t, k in zip(tcs, ks))

    def to_coords(self, R: Point) -> tuple:
        tcs = [t for t, _ in R]
        ks = [R[0][1]] if self.tie_k else [k for _, k in R]
        return tuple(tcs) + tuple(ks)

    def contains(self, R: Point) -> bool:
        if len(R) != self.layers:
            return False
        if self.tie_k and len({k for _, k in R}) > 1:
            return False
        return all(t in self.tc_options and _on_k_grid(k, self.k_options) for t, k in R)

    def normalized(self, R: Point) -> np.ndarray:
        out = []
        for axis, v in zip(self.axes(), self.to_coords(R)):
            i = _axis_index(axis, v)
            out.append(i / (len(axis) - 1) if len(axis) > 1 else 0.0)
        return np.array(out)

    def points(self):
        for c in itertools.product(*self.axes()):
            yield self.to_point(c)

    def sample(self, rng: np.random.Generator) -> Point:
        return self.to_point([a[int(rng.integers(len(a)))] for a in self.axes()])


def _on_k_grid(k: float, opts) -> bool:
    return any(abs(k - o) < 1e-9 for o in opts)


def _axis_index(axis, v) -> int:
    for i, a in enumerate(axis):
        if abs(a - v) < 1e-9:
            return i
    raise ParameterError(f"value {v} not on grid {axis}")


@dataclass(frozen=True)
class DseConfig:
    alpha: float = 0.0
    beta: float = 0.0
    max_iter: int = 200
    init_samples: int = 8
    length_scale: float = 0.2
    noise: float = 1e-4
    patience: int = 30
    candidates: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("alpha and beta must be >= 0")
        if self.max_iter < 0 or self.init_samples < 1:
            raise ParameterError("max_iter must be >= 0 and init_samples >= 1")
        if self.length_scale <= 0 or self.noise <= 0:
            raise ParameterError("length_scale and noise must be > 0")
        if self.patience < 1 or self.candidates < 1:
            raise ParameterError("patience and candidates must be >= 1")

    @classmethod
    def preset(cls, name: str, **kw) -> "DseConfig":
        try:
            a, b = PRESETS[name.lower()]
        except KeyError as exc:
            raise ParameterError(f"unknown preset {name!r}") from exc
        return cls(alpha=a, beta=b, **kw)


def l_cmp(R: Point, seq_lens: Sequence[int]) -> float:
    num = sum((S / tc) * k for (tc, k), S in zip(R, seq_lens))
    den = sum(S * k for (_, k), S in zip(R, seq_lens))
    return num / den if den else 0.0


def l_exp(R: Point, seq_lens: Sequence[int]) -> float:
    return float(sum(S / (S / tc) for (tc, _), S in zip(R, seq_lens)))


@dataclass(frozen=True)
class Evaluation:
    R: Point
    J: float
    l_en: float
    l_cmp: float
    l_exp: float


def objective(R: Point, evaluator: Callable[[Point], float], alpha: float, beta: float,
              space: SearchSpace) -> Evaluation:
    if not space.contains(R):
        raise ParameterError(f"point {R} is off the search grid")
    le = float(evaluator(R))
    lc = l_cmp(R, space.seq_lens)
    lx = l_exp(R, space.seq_lens)
    return Evaluation(R, le + alpha * lc + beta * lx, le, lc, lx)


def _kernel(a: np.ndarray, b: np.ndarray, ell: float) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * d2 / ell ** 2)


def gp_posterior(Xtr: np.ndarray, ytr: np.ndarray, Xc: np.ndarray, ell: float,
                 noise: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean GP on standardized targets; returns mean and std in the
    original units."""
    mu0, sd0 = ytr.mean(), ytr.std()
    sd0 = sd0 if sd0 > 0 else 1.0
    y = (ytr - mu0) / sd0
    K = _kernel(Xtr, Xtr, ell) + noise * np.eye(len(Xtr))
    cf = cho_factor(K, lower=True)
    Ks = _kernel(Xtr, Xc, ell)
    mean = Ks.T @ cho_solve(cf, y)
    var = 1.0 - np.einsum("ij,ij->j", Ks, cho_solve(cf, Ks))
    return mu0 + sd0 * mean, sd0 * np.sqrt(np.maximum(var, 1e-12))


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float) -> np.ndarray:
    z = (best - mean) / std
    return (best - mean) * norm.cdf(z) + std * norm.pdf(z)


@dataclass
class DseResult:
    best: Evaluation
    history: list[Evaluation] = field(default_factory=list)
    incumbent: list[float] = field(default_factory=list)
    seed: int = 0
    stopped: str = "max_iter"

    def to_json(self) -> str:
        def ev(e: Evaluation) -> dict:
            return {"R": [list(p) for p in e.R], "J": _num(e.J), "l_en": _num(e.l_en),
                    "l_cmp": e.l_cmp, "l_exp": e.l_exp}
        doc = {"schema_version": 1, "seed": self.seed, "stopped": self.stopped,
               "best": ev(self.best), "history": [ev(e) for e in self.history],
               "incumbent": [_num(v) for v in self.incumbent]}
        return json.dumps(doc, sort_keys=True, indent=2)


def _num(v: float):
    return v if math.isfinite(v) else "inf"


def _safe_eval(R, evaluator, cfg, space) -> Evaluation:
    try:
        e = objective(R, evaluator, cfg.alpha, cfg.beta, space)
    except ParameterError:
        raise
    except Exception:
        return Evaluation(R, math.inf, math.inf, l_cmp(R, space.seq_lens), l_exp(R, space.seq_lens))
    if not math.isfinite(e.J):
        return Evaluation(R, math.inf, e.l_en, e.l_cmp, e.l_exp)
    return e


def run_dse(space: SearchSpace, cfg: DseConfig, evaluator: Callable[[Point], float]) -> DseResult:
    """GP/EI loop.

    ``init_samples`` distinct random points seed the history. Each iteration
    fits the GP to the finite samples, scores EI on a random subset of
    unseen grid points, evaluates the best one and updates the incumbent.
    Stops after ``max_iter`` iterations, ``patience`` iterations without
    improvement, or when the grid is exhausted. Evaluator failures are
    recorded with J = inf and left out of the surrogate.
    """
    rng = make_rng(cfg.seed)
    seen: set[Point] = set()
    hist: list[Evaluation] = []
    trace: list[float] = []
    best: Evaluation | None = None

    def record(e: Evaluation):
        nonlocal best
        hist.append(e)
        seen.add(e.R)
        if best is None or e.J < best.J:
            best = e
        trace.append(best.J)

    n_init = min(cfg.init_samples, space.size)
    attempts = 0
    while len(seen) < n_init and attempts < 100 * n_init:
        attempts += 1
        R = space.sample(rng)
        if R not in seen:
            record(_safe_eval(R, evaluator, cfg, space))

    coords: dict[Point, np.ndarray] = {}

    def norm_of(R: Point) -> np.ndarray:
        if R not in coords:
            coords[R] = space.normalized(R)
        return coords[R]

    stopped = "max_iter"
    stale = 0
    for _ in range(cfg.max_iter):
        if len(seen) >= space.size:
            stopped = "exhausted"
            break
        cands = _candidates(space, seen, rng, cfg.candidates)
        if not cands:
            stopped = "exhausted"
            break
        finite = [e for e in hist if math.isfinite(e.J)]
        if len(finite) >= 2:
            Xtr = np.array([norm_of(e.R) for e in finite])
            ytr = np.array([e.J for e in finite])
            Xc = np.array([norm_of(R) for R in cands])
            mean, std = gp_posterior(Xtr, ytr, Xc, cfg.length_scale, cfg.noise)
            ei = expected_improvement(mean, std, float(ytr.min()))
            pick = cands[int(np.argmax(ei))]  # first maximum on ties
        else:
            pick = cands[0]
        prev = best.J
        record(_safe_eval(pick, evaluator, cfg, space))
        stale = 0 if best.J < prev else stale + 1
        if stale >= cfg.patience:
            stopped = "converged"
            break
    return DseResult(best, hist, trace, cfg.seed, stopped)


def _candidates(space: SearchSpace, seen: set, rng: np.random.Generator, n: int) -> list[Point]:
    if space.size <= n:
        return [R for R in space.points() if R not in seen]
    out: list[Point] = []
    chosen: set = set()
    for _ in range(4 * n):
        R = space.sample(rng)
        if R not in seen and R not in chosen:
            chosen.add(R)
            out.append(R)
            if len(out) >= n:
                break
    return out


def proxy_len(R: Point, workloads, *, config_overrides: dict | None = None) -> float:
    """Mean relative L2 error of the sparse pipeline against dense attention.

    ``R[i] = (T_c, k)`` runs layer ``i`` on ``workloads[i]`` with ``T_c``
    SADS segments of width ``S / T_c`` and SU-FA tiles of that width.
    """
    from .pipeline import PipelineConfig, run_pipeline

    if len(R) != len(workloads):
        raise ParameterError("one workload per layer is required")
    errs = []
    for (tc, k), wl in zip(R, workloads):
        S = wl.spec.seq_len
        cfg = PipelineConfig(segments=int(tc), k=float(k), tile_size=max(1, S // int(tc)),
                             **(config_overrides or {}))
        errs.append(run_pipeline(cfg, wl).output_error)
    return float(np.mean(errs))
