"""Experiment harness: seeded campaigns over instances, starts, and methods.

A campaign generates ``num_instances`` problem instances, sweeps a reference
front for each, runs every configured method from every start, and reduces
the runs to per-instance metric reports plus mean/std aggregates across
instances. Artifacts are a flat ``runs.csv``, a ``summary.json``, one front
CSV per instance, and one plot-data CSV of final objective vectors per
method.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .gmoba import SolverConfig, solve, solve_batch
from .l2o import TrainConfig, l2o_then_gmoba, train
from .metrics import MetricsReport, compute_report
from .moml import MomlConfig, moml_solve, moml_solve_batch
from .pareto_front import ParetoFront, load_front_csv, nondominated_filter, save_front_csv, sweep_front
from .problem import ProblemDims, generate_instance
from .seeding import derive_seed

THREADS_ENV = "MOBA_THREADS"
KNOWN_METHODS = ("gmoba", "moml", "l2o-gmoba")
RUNS_CSV_COLUMNS = ("method", "instance_seed", "start_id", "iters", "time_ms",
                    "dp", "feasibility", "stationarity", "termination")


class ConfigError(ValueError):
    pass


@dataclass
class ProblemSection:
    n: int = 100
    m: int = 2
    mu: float = 0.1
    num_instances: int = 5
    instance_seed: int = 2024


@dataclass
class StartsSection:
    num_starts: int = 100
    start_seed: int = 7


@dataclass
class L2OSection:
    layers: int = 100
    train_iters: int = 2000
    learn_rate: float = 0.01
    loss: str = "L1"
    seed: int = 0
    grad_mode: str = "auto"


@dataclass
class FrontSection:
    num_weights: int | None = None  # None picks the per-m default


@dataclass
class MetricsSection:
    purity_tau: float = 0.1


@dataclass
class OutputSection:
    dir: str = "out"
    formats: tuple = ("csv", "json")


@dataclass
class ExperimentConfig:
    problem: ProblemSection = field(default_factory=ProblemSection)
    starts: StartsSection = field(default_factory=StartsSection)
    methods: tuple = ("gmoba",)
    gmoba: SolverConfig = field(default_factory=SolverConfig)
    moml: MomlConfig = field(default_factory=MomlConfig)
    l2o: L2OSection = field(default_factory=L2OSection)
    front: FrontSection = field(default_factory=FrontSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self):
        if not self.methods:
            raise ConfigError("methods must list at least one solver")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ConfigError(f"unknown method {m!r}; known: {KNOWN_METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must be distinct")
        if self.problem.num_instances < 1 or self.starts.num_starts < 1:
            raise ConfigError("need at least one instance and one start")
        if self.problem.n < 1 or self.problem.m < 1 or self.problem.mu <= 0:
            raise ConfigError("problem.n / problem.m must be positive, problem.mu > 0")
        for fmt in self.output.formats:
            if fmt not in ("csv", "json"):
                raise ConfigError(f"unknown output format {fmt!r}")


# configuration files are flat typed key-value lines with dotted sections,
# e.g. "problem.n = 100"; lists are comma separated
_LIST_KEYS = {"methods", "output.formats"}
_SECTION_FIELDS = {
    "problem": ProblemSection,
    "starts": StartsSection,
    "gmoba": SolverConfig,
    "moml": MomlConfig,
    "l2o": L2OSection,
    "front": FrontSection,
    "metrics": MetricsSection,
    "output": OutputSection,
}


def _parse_scalar(tok: str):
    tok = tok.strip()
    low = tok.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "none":
        return None
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def parse_config_text(text: str) -> dict:
    """Parse the flat key-value format into a {dotted key: value} mapping."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in _LIST_KEYS or "," in value:
            out[key] = tuple(_parse_scalar(tok) for tok in value.split(",") if tok.strip())
        else:
            out[key] = _parse_scalar(value)
    return out


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, value in mapping.items():
        if key == "methods":
            cfg.methods = tuple(value) if isinstance(value, (tuple, list)) else (value,)
            continue
        if "." not in key:
            raise ConfigError(f"unknown key {key!r}")
        section, name = key.split(".", 1)
        cls = _SECTION_FIELDS.get(section)
        if cls is None or name not in cls.__dataclass_fields__:
            raise ConfigError(f"unknown key {key!r}")
        target = getattr(cfg, section)
        current = getattr(target, name)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{key} expects true/false")
        elif isinstance(current, int) and not isinstance(value, bool) and isinstance(value, int):
            pass
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} expects a number")
            value = float(value)
        elif isinstance(current, int):
            raise ConfigError(f"{key} expects an integer")
        setattr(target, name, value)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text()))


def config_echo(cfg: ExperimentConfig) -> dict:
    """Canonical flat view of every resolved configuration value."""
    out = {"methods": list(cfg.methods)}
    for section, cls in _SECTION_FIELDS.items():
        obj = getattr(cfg, section)
        for name in cls.__dataclass_fields__:
            if name in ("record_history", "lyapunov_check"):
                continue
            val = getattr(obj, name)
            if isinstance(val, tuple):
                val = list(val)
            out[f"{section}.{name}"] = val
    return out


def resolve_threads(threads=None) -> int:
    """Explicit argument, else the MOBA_THREADS environment variable, else 1."""
    if threads is None:
        threads = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(threads)
    except (TypeError, ValueError):
        raise ConfigError(f"thread count must be an integer, got {threads!r}")
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    return threads


@dataclass
class RunRow:
    method: str
    instance_seed: int
    start_id: int
    iters: int
    time_ms: float
    dp: float
    feasibility: float
    stationarity: float
    termination: str
    final_F: np.ndarray


@dataclass
class CampaignResult:
    config: ExperimentConfig
    instance_seeds: list
    fronts: dict
    rows: list
    reports: dict        # (method, instance_seed) -> MetricsReport
    stats: dict          # (method, instance_seed) -> {iters_mean, time_ms_mean, failures}
    aggregates: dict     # method -> metric -> {mean, std}
    l2o_training: dict   # instance_seed -> {time_s, iters, diverged}


def start_point(cfg: ExperimentConfig, instance_seed: int, start_id: int) -> np.ndarray:
    """Standard normal start, shared across methods by construction: the
    stream key involves only the start seed, the instance, and the start id."""
    rng = np.random.default_rng(
        derive_seed("start", cfg.starts.start_seed, instance_seed, start_id))
    return rng.standard_normal(cfg.problem.n)


def _run_single(cfg, method, inst, front, l2o_params, x0):
    if method == "gmoba":
        return solve(inst, x0, config=cfg.gmoba, front=front)
    if method == "moml":
        return moml_solve(inst, x0, config=cfg.moml, front=front)
    if method == "l2o-gmoba":
        return l2o_then_gmoba(inst, l2o_params, x0, cfg.gmoba, front)
    raise ConfigError(f"unknown method {method!r}")


def _row_from_record(cfg, method, inst, front, rec, start_id) -> RunRow:
    ok = rec.reason != "divergence"
    if ok:
        state = rec.state
        dp_val = metrics_mod.dp(inst, front, state.x)
        feas = metrics_mod.feasibility(inst, state.x, state.y)
        from .direction import stationarity_residual
        stat = stationarity_residual(inst.exact_hypergradients(state.x))
        final_F = state.last_F.copy()
    else:
        dp_val = feas = stat = float("nan")
        final_F = np.full(inst.dims.m, np.nan)
    return RunRow(method=method, instance_seed=inst.seed, start_id=start_id,
                  iters=rec.iterations,
                  time_ms=1000.0 * (rec.parallel_time_s + rec.preamble_time_s),
                  dp=dp_val, feasibility=feas, stationarity=stat,
                  termination=rec.reason, final_F=final_F)


def run_campaign(cfg: ExperimentConfig, threads=None, log=None) -> CampaignResult:
    """Execute the full instances x methods x starts grid.

    Per-run work is pure and dispatched over a thread pool; results are
    reduced in a canonical order so the artifacts do not depend on the
    thread count. Divergent runs are excluded from metric sets but counted.
    """
    cfg.validate()
    threads = resolve_threads(threads)
    say = log if log is not None else (lambda msg: None)

    dims = ProblemDims(cfg.problem.n, cfg.problem.n, cfg.problem.m)
    instances, fronts, seeds = [], {}, []
    l2o_params_by_seed, l2o_training = {}, {}
    for i in range(cfg.problem.num_instances):
        iseed = derive_seed("instance", cfg.problem.instance_seed, i)
        inst = generate_instance(dims, cfg.problem.mu, iseed)
        say(f"instance {i}: seed {iseed}, sweeping front")
        front = sweep_front(inst, cfg.front.num_weights)
        instances.append(inst)
        fronts[iseed] = front
        seeds.append(iseed)
        if "l2o-gmoba" in cfg.methods:
            tc = TrainConfig(layers=cfg.l2o.layers, train_iters=cfg.l2o.train_iters,
                             learn_rate=cfg.l2o.learn_rate, loss_id=cfg.l2o.loss,
                             seed=derive_seed("l2o-train", cfg.l2o.seed, iseed),
                             alpha=cfg.gmoba.alpha, beta=cfg.gmoba.beta,
                             eta=cfg.gmoba.eta, grad_mode=cfg.l2o.grad_mode)
            say(f"instance {i}: training unrolled solver ({tc.train_iters} iters)")
            result = train(inst, tc)
            l2o_params_by_seed[iseed] = result.params
            l2o_training[iseed] = {"time_s": result.time_s,
                                   "iters": len(result.loss_history),
                                   "diverged": result.diverged}

    jobs = [(mi, ii) for mi, _ in enumerate(cfg.methods) for ii in range(len(instances))]

    def run_group(job):
        # one job per (method, instance): the plain drivers take all starts
        # in one vectorized pass, the unrolled preamble stays per-start
        mi, ii = job
        method = cfg.methods[mi]
        inst = instances[ii]
        front = fronts[inst.seed]
        starts = [start_point(cfg, inst.seed, j) for j in range(cfg.starts.num_starts)]
        plain = inst.l1_weights is None
        if method == "gmoba" and plain and not cfg.gmoba.record_history:
            recs = solve_batch(inst, np.array(starts), config=cfg.gmoba, front=front)
        elif method == "moml" and plain and not cfg.moml.record_history:
            recs = moml_solve_batch(inst, np.array(starts), config=cfg.moml, front=front)
        else:
            recs = [_run_single(cfg, method, inst, front,
                                l2o_params_by_seed.get(inst.seed), x0)
                    for x0 in starts]
        return [_row_from_record(cfg, method, inst, front, rec, j)
                for j, rec in enumerate(recs)]

    if threads == 1:
        groups = [run_group(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            groups = list(pool.map(run_group, jobs))
    rows = [row for group in groups for row in group]

    reports, stats, aggregates = {}, {}, {}
    for method in cfg.methods:
        per_instance = []
        for inst in instances:
            group = [r for r in rows if r.method == method and r.instance_seed == inst.seed]
            good = [r for r in group if r.termination != "divergence"]
            key = (method, inst.seed)
            stats[key] = {
                "iters_mean": float(np.mean([r.iters for r in group])),
                "time_ms_mean": float(np.mean([r.time_ms for r in group])),
                "failures": len(group) - len(good),
            }
            if good:
                finals = np.array([r.final_F for r in good])
                yn = finals[nondominated_filter(finals)]
                report = compute_report(yn, fronts[inst.seed].objectives,
                                        [r.dp for r in good],
                                        [r.feasibility for r in good],
                                        tau=cfg.metrics.purity_tau)
            else:
                report = None
            reports[key] = report
            per_instance.append(report)
        aggregates[method] = _aggregate(per_instance)

    return CampaignResult(config=cfg, instance_seeds=seeds, fronts=fronts, rows=rows,
                          reports=reports, stats=stats, aggregates=aggregates,
                          l2o_training=l2o_training)


_AGG_FIELDS = ("purity", "gd", "spread_gamma", "spread_delta", "sp",
               "dp_mean", "feasibility_mean")


def _aggregate(reports) -> dict:
    """Mean and sample standard deviation across instances, NaN-safe."""
    out = {}
    for name in _AGG_FIELDS:
        vals = [getattr(r, name) for r in reports
                if r is not None and math.isfinite(getattr(r, name))]
        if not vals:
            out[name] = {"mean": None, "std": None}
        else:
            out[name] = {"mean": float(np.mean(vals)),
                         "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else None}
    return out


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def summary_dict(result: CampaignResult) -> dict:
    cfg = result.config
    methods = {}
    for method in cfg.methods:
        per_instance = []
        for iseed in result.instance_seeds:
            key = (method, iseed)
            report = result.reports[key]
            per_instance.append({
                "instance_seed": iseed,
                "report": report.as_dict() if report is not None else None,
                **result.stats[key],
            })
        methods[method] = {"per_instance": per_instance,
                           "aggregate": result.aggregates[method]}
    return _json_safe({
        "config": config_echo(cfg),
        "rng": "numpy-PCG64",
        "note": ("Y_N per method and instance is the non-dominated filter of final "
                 "objective vectors over non-divergent starts; time_ms uses the "
                 "parallel-update timing convention"),
        "instance_seeds": list(result.instance_seeds),
        "methods": methods,
        "l2o_training": {str(k): v for k, v in result.l2o_training.items()},
    })


def emit(result: CampaignResult, out_dir, formats=None) -> list:
    """Write artifacts; returns the list of created paths."""
    cfg = result.config
    formats = tuple(formats) if formats is not None else tuple(cfg.output.formats)
    for fmt in formats:
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []

    if "csv" in formats:
        runs_path = out / "runs.csv"
        with open(runs_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RUNS_CSV_COLUMNS)
            for r in result.rows:
                writer.writerow([r.method, r.instance_seed, r.start_id, r.iters,
                                 repr(float(r.time_ms)), repr(float(r.dp)),
                                 repr(float(r.feasibility)),
                                 repr(float(r.stationarity)), r.termination])
        created.append(runs_path)

        for iseed in result.instance_seeds:
            front_path = out / f"front_{iseed}.csv"
            save_front_csv(result.fronts[iseed], front_path)
            created.append(front_path)

        m = cfg.problem.m
        for method in cfg.methods:
            plot_path = out / f"plotdata_{method}.csv"
            with open(plot_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["instance_seed", "start_id"]
                                + [f"F_{j + 1}" for j in range(m)])
                for r in result.rows:
                    if r.method == method and r.termination != "divergence":
                        writer.writerow([r.instance_seed, r.start_id]
                                        + [repr(float(v)) for v in r.final_F])
            created.append(plot_path)

    if "json" in formats:
        summary_path = out / "summary.json"
        with open(summary_path, "w") as fh:
            json.dump(summary_dict(result), fh, indent=2, sort_keys=True)
            fh.write("\n")
        created.append(summary_path)
    return created


def recompute_metrics(out_dir) -> dict:
    """Rebuild every metric report from the saved artifacts alone.

    Reads runs.csv, the per-instance front CSVs, plotdata CSVs, and the
    config echo in summary.json; returns a mapping shaped like the
    "methods" section of the summary so the two can be compared.
    """
    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text())
    tau = summary["config"]["metrics.purity_tau"]
    methods = summary["config"]["methods"]
    instance_seeds = summary["instance_seeds"]

    runs = []
    with open(out / "runs.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        runs.extend(reader)

    plot = {}
    for method in methods:
        with open(out / f"plotdata_{method}.csv", newline="") as fh:
            plot[method] = list(csv.DictReader(fh))

    result = {}
    for method in methods:
        per_instance = []
        for iseed in instance_seeds:
            front = load_front_csv(out / f"front_{iseed}.csv")
            finals = np.array([[float(v) for k, v in row.items() if k.startswith("F_")]
                               for row in plot[method] if int(row["instance_seed"]) == iseed])
            rrows = [r for r in runs
                     if r["method"] == method and int(r["instance_seed"]) == iseed]
            good = [r for r in rrows if r["termination"] != "divergence"]
            if len(finals):
                yn = finals[nondominated_filter(finals)]
                report = compute_report(yn, front.objectives,
                                        [float(r["dp"]) for r in good],
                                        [float(r["feasibility"]) for r in good],
                                        tau=tau).as_dict()
            else:
                report = None
            per_instance.append({"instance_seed": iseed, "report": report,
                                 "failures": len(rrows) - len(good)})
        reports = [None if p["report"] is None else MetricsReport(**p["report"])
                   for p in per_instance]
        result[method] = {"per_instance": per_instance,
                          "aggregate": _aggregate(reports)}
    return _json_safe(result)
