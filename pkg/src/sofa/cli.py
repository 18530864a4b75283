"""Command-line front end.

Subcommands: ``run``, ``figdata``, ``dse``, ``bench``. Every invocation
writes its outputs and a ``manifest.json`` atomically into ``--out``.
Exit codes: 0 success, 2 configuration error, 3 runtime error.

``SOFA_MAX_THREADS`` caps BLAS/OpenMP worker threads.
"""

from __future__ import annotations

import os

_threads = os.environ.get("SOFA_MAX_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
import tempfile  # noqa: E402
from dataclasses import fields, replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .core import Distribution, ParameterError, WorkloadSpec, generate_workload  # noqa: E402
from .costmodel import (ComputeModel, Dims, MemoryModel, OpWeights, analytic_report,  # noqa: E402
                        weighted_cost)
from .dse import DseConfig, PRESETS, SearchSpace, proxy_len, run_dse  # noqa: E402
from .pipeline import PipelineConfig, StageError, config_to_dict, run_pipeline  # noqa: E402
from .sufa import flash_attention_tally, sufa_tally, vanilla_tally  # noqa: E402

SCHEMA_VERSION = 1
FIGURES = ("fa2_cost", "mat_vs_parallelism", "complexity_reduction", "recall_vs_k")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(Exception):
    pass


# -- output helpers -----------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Distribution):
        return o.value
    raise TypeError(f"not serializable: {type(o).__name__}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "inf"
    return str(v)


def to_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_outputs(out: Path, command: str, config_path, seed: int, files: dict[str, str]) -> None:
    for name, text in files.items():
        atomic_write(out / name, text)
    manifest = {"subcommand": command, "config": None if config_path is None else str(config_path),
                "seed": seed, "out": str(out), "schema_version": SCHEMA_VERSION,
                "outputs": sorted(files)}
    atomic_write(out / "manifest.json", canonical_json(manifest))


# -- config loading -----------------------------------------------------------

SECTIONS = {"workload", "pipeline", "memory", "weights", "compute", "dse"}


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    return doc


def _build(cls, section: dict, name: str, **fixed):
    if not isinstance(section, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)} - set(fixed)
    bad = set(section) - allowed
    if bad:
        raise ConfigError(f"{name}: unknown field(s) {sorted(bad)}")
    try:
        return cls(**section, **fixed)
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def workload_spec(doc: dict, seed: int | None) -> WorkloadSpec:
    sec = dict({"seq_len": 256, "head_dim": 64, "num_queries": 32}, **doc.get("workload", {}))
    if seed is not None:
        sec["seed"] = seed
    return _build(WorkloadSpec, sec, "workload")


def pipeline_config(doc: dict, args) -> PipelineConfig:
    sec = dict(doc.get("pipeline", {}))
    if isinstance(sec.get("r"), str):
        sec["r"] = float(sec["r"])
    for flag, key in (("dataflow", "dataflow"), ("k", "k"), ("segments", "segments")):
        v = getattr(args, flag, None)
        if v is not None:
            sec[key] = v
    if getattr(args, "rass", None) is not None:
        sec["rass"] = args.rass == "on"
    nested = {
        "weights": _build(OpWeights, doc.get("weights", {}), "weights"),
        "memory": _build(MemoryModel, doc.get("memory", {}), "memory"),
        "compute": _build(ComputeModel, doc.get("compute", {}), "compute"),
    }
    return _build(PipelineConfig, sec, "pipeline", **nested)


# -- subcommands --------------------------------------------------------------

def cmd_run(args) -> int:
    doc = load_config(args.config)
    spec = workload_spec(doc, args.seed)
    cfg = pipeline_config(doc, args)
    summary = run_pipeline(cfg, generate_workload(spec))
    run = summary.to_dict()
    run.pop("cost")
    run["config"] = {"workload": _spec_dict(spec), "pipeline": config_to_dict(cfg)}
    rows = [[s] + [t.as_dict()[k] for k in sorted(t.as_dict())] +
            [summary.cost.stage_weighted[s], summary.cost.stage_seconds[s]]
            for s, t in summary.stage_tallies.items()]
    kinds = sorted(next(iter(summary.stage_tallies.values())).as_dict())
    header = ["stage"] + [f"{k}[ops]" for k in kinds] + ["weighted[ops]", "time[s]"]
    write_outputs(Path(args.out), "run", args.config, spec.seed, {
        "run_summary.json": canonical_json(run),
        "cost_report.json": canonical_json(summary.cost.to_dict()),
        "stage_ops.csv": to_csv(header, rows),
    })
    return EXIT_OK


def _spec_dict(spec: WorkloadSpec) -> dict:
    return {f.name: getattr(spec, f.name) for f in fields(spec)}


def fig_fa2_cost(args, doc) -> tuple[list[str], list[list]]:
    w = _build(OpWeights, doc.get("weights", {}), "weights")
    rows = []
    for bc in (4, 16, 64):
        for S in (256, 512, 1024, 2048, 4096):
            T = S  # every token is a query
            van = vanilla_tally(T, S)
            fa2 = flash_attention_tally(T, S, bc, variant="fa2")
            rows.append([S, bc, math.ceil(S / bc), van.exp, fa2.exp, fa2.exp - van.exp,
                         van.cmp, fa2.cmp, fa2.cmp - van.cmp,
                         weighted_cost(fa2, w) - weighted_cost(van, w)])
    header = ["S[tokens]", "B_c[tokens]", "T_c[tiles]", "vanilla_exp[ops]", "fa2_exp[ops]",
              "excess_exp[ops]", "vanilla_cmp[ops]", "fa2_cmp[ops]", "excess_cmp[ops]",
              "excess_weighted[ops]"]
    return header, rows


def fig_mat(args, doc) -> tuple[list[str], list[list]]:
    mem = _build(MemoryModel, doc.get("memory", {}), "memory")
    comp = _build(ComputeModel, doc.get("compute", {}), "compute")
    rows = []
    for T in (32, 64, 128, 256, 512):
        d = Dims(T, 2048)
        st = analytic_report(d, "standard", mem=mem, compute=comp)
        ti = analytic_report(d, "tiled", mem=mem, compute=comp)
        rows.append([T, st.mat, ti.mat, st.latency_seconds, ti.latency_seconds,
                     st.dram_bytes, ti.dram_bytes])
    header = ["T[queries]", "mat_standard[ratio]", "mat_tiled[ratio]", "latency_standard[s]",
              "latency_tiled[s]", "dram_standard[bytes]", "dram_tiled[bytes]"]
    return header, rows


K_SWEEP = tuple(round(0.05 * i, 2) for i in range(1, 11))


def _sweep_spec(doc, args, dist) -> WorkloadSpec:
    base = dict({"seq_len": 256, "head_dim": 64, "num_queries": 32}, **doc.get("workload", {}))
    base["distribution"] = dist
    if args.seed is not None:
        base["seed"] = args.seed
    return _build(WorkloadSpec, base, "workload")


def fig_complexity(args, doc) -> tuple[list[str], list[list]]:
    wl = generate_workload(_sweep_spec(doc, args, "TypeII"))
    base = pipeline_config(doc, args)
    rows = []
    for k in K_SWEEP:
        s = run_pipeline(replace(base, k=k), wl)
        r = s.reductions
        rows.append([k, r["attention_gross"], r["attention_net"], r["attention_qkv_gross"],
                     r["attention_qkv_net"], s.recall, s.output_error])
    header = ["k[fraction]", "attention_gross[fraction]", "attention_net[fraction]",
              "attention_qkv_gross[fraction]", "attention_qkv_net[fraction]", "recall[fraction]",
              "output_error[rel_l2]"]
    return header, rows


RECALL_SEEDS = 10


def fig_recall(args, doc) -> tuple[list[str], list[list]]:
    """Recall per k averaged over ``RECALL_SEEDS`` consecutive seeds; single
    instances are noisy because the exact top-k grows with k."""
    base = pipeline_config(doc, args)
    first = _sweep_spec(doc, args, "TypeII").seed
    curves = {}
    for d in Distribution:
        per_seed = []
        for s in range(first, first + RECALL_SEEDS):
            wl = generate_workload(replace(_sweep_spec(doc, args, d.value), seed=s))
            per_seed.append([run_pipeline(replace(base, k=k), wl).recall for k in K_SWEEP])
        curves[d] = np.mean(per_seed, axis=0)
    rows = [[k] + [float(curves[d][i]) for d in Distribution] for i, k in enumerate(K_SWEEP)]
    header = ["k[fraction]"] + [f"recall_{d.value}[fraction]" for d in Distribution]
    return header, rows


FIG_FUNCS = {"fa2_cost": fig_fa2_cost, "mat_vs_parallelism": fig_mat,
             "complexity_reduction": fig_complexity, "recall_vs_k": fig_recall}


def cmd_figdata(args) -> int:
    doc = load_config(args.config)
    header, rows = FIG_FUNCS[args.figure](args, doc)
    seed = args.seed if args.seed is not None else doc.get("workload", {}).get("seed", 0)
    write_outputs(Path(args.out), "figdata", args.config, seed,
                  {f"{args.figure}.csv": to_csv(header, rows)})
    return EXIT_OK


def planted_evaluator(space: SearchSpace, target):
    """Squared normalized distance to ``target``: a smoke objective with a
    known optimum."""
    try:
        tgt = space.normalized(tuple((int(t), float(k)) for t, k in target))
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"dse.planted: {exc}") from exc

    def f(R):
        return float(((space.normalized(R) - tgt) ** 2).sum())
    return f


def cmd_dse(args) -> int:
    doc = load_config(args.config)
    sec = dict(doc.get("dse", {}))
    seq_lens = tuple(sec.pop("seq_lens", (128,)))
    tie_k = bool(sec.pop("tie_k", False))
    planted = sec.pop("planted", None)
    preset = sec.pop("preset", None) or args.alpha_beta
    if args.seed is not None:
        sec["seed"] = args.seed
    if args.max_iter is not None:
        sec["max_iter"] = args.max_iter
    try:
        space = SearchSpace(seq_lens, tie_k=tie_k)
    except ParameterError as exc:
        raise ConfigError(f"dse: {exc}") from exc
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"dse: unknown preset {preset!r}")
        sec.setdefault("alpha", PRESETS[preset][0])
        sec.setdefault("beta", PRESETS[preset][1])
    cfg = _build(DseConfig, sec, "dse")
    if planted is not None:
        evaluator = planted_evaluator(space, planted)
    else:
        base = dict({"head_dim": 32, "num_queries": 8}, **doc.get("workload", {}))
        wls = []
        for i, S in enumerate(seq_lens):
            spec = _build(WorkloadSpec, dict(base, seq_len=S, seed=cfg.seed + i), "workload")
            wls.append(generate_workload(spec))
        evaluator = lambda R: proxy_len(R, wls)  # noqa: E731
    res = run_dse(space, cfg, evaluator)
    doc_out = json.loads(res.to_json())
    doc_out["config"] = {"alpha": cfg.alpha, "beta": cfg.beta, "max_iter": cfg.max_iter,
                         "init_samples": cfg.init_samples, "seq_lens": list(seq_lens),
                         "tie_k": tie_k, "preset": preset}
    write_outputs(Path(args.out), "dse", args.config, cfg.seed,
                  {"dse_result.json": canonical_json(doc_out)})
    return EXIT_OK


def cmd_bench(args) -> int:
    """Modeled op counts and costs of the softmax variants over a row sweep."""
    doc = load_config(args.config)
    w = _build(OpWeights, doc.get("weights", {}), "weights")
    bc = 16
    rows = []
    for S in (256, 512, 1024, 2048, 4096):
        n = S // 4
        variants = {
            "vanilla": vanilla_tally(1, n),
            "fa1": flash_attention_tally(1, n, bc, variant="fa1"),
            "fa2": flash_attention_tally(1, n, bc, variant="fa2"),
            "sufa_ascending": sufa_tally(n, descending=False),
            "sufa_descending": sufa_tally(n),
        }
        for name, t in variants.items():
            rows.append([S, n, name, weighted_cost(t, w), weighted_cost(t, w, lanes=64)])
    header = ["S[tokens]", "selected[tokens]", "variant", "weighted_per_score[ops]",
              "weighted_64_lanes[ops]"]
    seed = args.seed if args.seed is not None else 0
    write_outputs(Path(args.out), "bench", args.config, seed, {"bench.csv": to_csv(header, rows)})
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sofa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=Path, default=Path("out"))

    def pipe_flags(sp):
        sp.add_argument("--dataflow", choices=("tiled", "standard"), default=None)
        sp.add_argument("--rass", choices=("on", "off"), default=None)
        sp.add_argument("--k", type=float, default=None)
        sp.add_argument("--segments", type=int, default=None)

    r = sub.add_parser("run", help="run the pipeline on a generated workload")
    common(r)
    pipe_flags(r)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("figdata", help="emit CSV inputs for a figure")
    f.add_argument("figure", choices=FIGURES)
    common(f)
    pipe_flags(f)
    f.set_defaults(func=cmd_figdata)

    d = sub.add_parser("dse", help="design-space exploration")
    common(d)
    d.add_argument("--alpha-beta", choices=sorted(PRESETS), default=None)
    d.add_argument("--max-iter", type=int, default=None)
    d.set_defaults(func=cmd_dse)

    b = sub.add_parser("bench", help="modeled costs of the softmax variants")
    common(b)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"runtime error in {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
