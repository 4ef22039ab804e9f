"""Command line front end.

Subcommands mirror the library surface: generate an instance, sweep its
front, run one solver, run a full campaign, train the unrolled solver, and
recompute metrics from saved artifacts. Failures exit nonzero with a single
diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .direction import stationarity_residual
from .gmoba import SolverConfig, solve
from .harness import (ConfigError, ExperimentConfig, config_from_mapping, emit,
                      load_config, parse_config_text, recompute_metrics,
                      resolve_threads, run_campaign, summary_dict)
from .l2o import TrainConfig, l2o_then_gmoba, load_params, save_params, train
from .moml import MomlConfig, moml_solve
from .pareto_front import load_front_csv, save_front_csv, sweep_front
from .problem import ProblemDims, generate_instance, load_instance
from .seeding import derive_seed


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moba",
                                     description="Multi-objective bilevel solver bench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a quadratic test instance")
    p.add_argument("--n", type=int, default=100, help="variable dimension (upper == lower)")
    p.add_argument("--m", type=int, default=2, help="number of objectives")
    p.add_argument("--mu", type=float, default=0.1, help="lower-level strong convexity")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output .npz path")

    p = sub.add_parser("front", help="sweep the reference front of an instance")
    p.add_argument("--instance", required=True, help="instance .npz path")
    p.add_argument("--num-weights", type=int, default=None,
                   help="weight count (default 500 for m=2, 60 per edge otherwise)")
    p.add_argument("--out", required=True, help="output .csv path")

    p = sub.add_parser("solve", help="run one solver from one start")
    p.add_argument("--instance", required=True)
    p.add_argument("--method", choices=("gmoba", "moml", "l2o-gmoba"), default="gmoba")
    p.add_argument("--seed", type=int, default=0, help="start point seed")
    p.add_argument("--config", default=None, help="optional config file for solver keys")
    p.add_argument("--front", default=None, help="optional front .csv enabling dp stopping")
    p.add_argument("--params", default=None, help="trained parameters .npz (l2o-gmoba)")
    p.add_argument("--out", default=None, help="write the run record JSON here instead of stdout")

    p = sub.add_parser("campaign", help="run a full experiment campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p.add_argument("--threads", default=None,
                   help=f"worker threads (default: MOBA_THREADS or 1)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("train-l2o", help="train the unrolled solver on an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--config", default=None, help="optional config file for l2o/gmoba keys")
    p.add_argument("--seed", type=int, default=None, help="override the training seed")
    p.add_argument("--out", required=True, help="output parameters .npz path")

    p = sub.add_parser("metrics", help="recompute metrics from campaign artifacts")
    p.add_argument("--out", required=True, help="campaign output directory")
    p.add_argument("--check", action="store_true",
                   help="compare against summary.json and fail on mismatch")
    return parser


def _load_cfg(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return load_config(path)


def _cmd_generate(args) -> int:
    dims = ProblemDims(args.n, args.n, args.m)
    inst = generate_instance(dims, args.mu, args.seed)
    inst.save(args.out)
    print(f"wrote instance seed={args.seed} n={args.n} m={args.m} to {args.out}")
    return 0


def _cmd_front(args) -> int:
    inst = load_instance(args.instance)
    front = sweep_front(inst, args.num_weights)
    save_front_csv(front, args.out)
    print(f"wrote {front.objectives.shape[0]} front points to {args.out}")
    return 0


def _cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    cfg = _load_cfg(args.config)
    front = load_front_csv(args.front) if args.front else None
    x0 = np.random.default_rng(
        derive_seed("start", args.seed, inst.seed, 0)).standard_normal(inst.dims.n_x)
    if args.method == "gmoba":
        rec = solve(inst, x0, config=cfg.gmoba, front=front)
    elif args.method == "moml":
        rec = moml_solve(inst, x0, config=cfg.moml, front=front)
    else:
        if args.params is None:
            raise ConfigError("l2o-gmoba needs --params with trained parameters")
        params, _, _ = load_params(args.params)
        rec = l2o_then_gmoba(inst, params, x0, cfg.gmoba, front)
    state = rec.state
    record = {
        "method": args.method,
        "instance_seed": inst.seed,
        "iterations": rec.iterations,
        "termination": rec.reason,
        "parallel_time_s": rec.parallel_time_s + rec.preamble_time_s,
        "wall_time_s": rec.wall_time_s + rec.preamble_time_s,
        "final_objectives": [float(v) for v in state.last_F],
        "feasibility": metrics_mod.feasibility(inst, state.x, state.y),
        "stationarity": stationarity_residual(inst.exact_hypergradients(state.x)),
    }
    if front is not None:
        record["dp"] = metrics_mod.dp(inst, front, state.x)
    text = json.dumps(record, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote run record to {args.out}")
    else:
        print(text)
    return 0


def _cmd_campaign(args) -> int:
    cfg = load_config(args.config)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    result = run_campaign(cfg, threads=resolve_threads(args.threads), log=log)
    out_dir = args.out if args.out is not None else cfg.output.dir
    created = emit(result, out_dir)
    for path in created:
        print(path)
    return 0


def _cmd_train_l2o(args) -> int:
    inst = load_instance(args.instance)
    cfg = _load_cfg(args.config)
    seed = args.seed if args.seed is not None else derive_seed(
        "l2o-train", cfg.l2o.seed, inst.seed)
    tc = TrainConfig(layers=cfg.l2o.layers, train_iters=cfg.l2o.train_iters,
                     learn_rate=cfg.l2o.learn_rate, loss_id=cfg.l2o.loss,
                     seed=seed, alpha=cfg.gmoba.alpha, beta=cfg.gmoba.beta,
                     eta=cfg.gmoba.eta, grad_mode=cfg.l2o.grad_mode)
    result = train(inst, tc)
    save_params(result.params, args.out, config=tc)
    status = "diverged" if result.diverged else "ok"
    print(f"trained {len(result.loss_history)} iterations ({status}), "
          f"final loss {result.loss_history[-1] if result.loss_history else float('nan')!r}, "
          f"wrote {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    recomputed = recompute_metrics(args.out)
    if not args.check:
        print(json.dumps(recomputed, indent=2, sort_keys=True))
        return 0
    summary = json.loads((Path(args.out) / "summary.json").read_text())
    mismatches = _compare(summary["methods"], recomputed)
    if mismatches:
        raise ConfigError(f"metrics mismatch at {mismatches[0]} "
                          f"({len(mismatches)} field(s) differ)")
    print(f"metrics match summary.json for {len(recomputed)} method(s)")
    return 0


def _compare(saved, recomputed, path="", tol=1e-12):
    """Recursively diff the metric fields the recompute path reproduces."""
    mismatches = []
    if isinstance(saved, dict) and isinstance(recomputed, dict):
        for key in recomputed:
            if key in ("iters_mean", "time_ms_mean"):
                continue
            if key not in saved:
                mismatches.append(f"{path}/{key} missing")
                continue
            mismatches.extend(_compare(saved[key], recomputed[key], f"{path}/{key}", tol))
        return mismatches
    if isinstance(saved, (int, float)) and isinstance(recomputed, (int, float)):
        if abs(float(saved) - float(recomputed)) > tol:
            mismatches.append(path)
        return mismatches
    if isinstance(saved, list) and isinstance(recomputed, list):
        if len(saved) != len(recomputed):
            return [f"{path} length"]
        for i, (a, b) in enumerate(zip(saved, recomputed)):
            mismatches.extend(_compare(a, b, f"{path}[{i}]", tol))
        return mismatches
    if saved != recomputed:
        mismatches.append(path)
    return mismatches


_COMMANDS = {
    "generate": _cmd_generate,
    "front": _cmd_front,
    "solve": _cmd_solve,
    "campaign": _cmd_campaign,
    "train-l2o": _cmd_train_l2o,
    "metrics": _cmd_metrics,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
