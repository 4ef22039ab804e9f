"""Acceptance gate: one test per shipped guarantee.

Every test measures the quantities it checks, prints a single
"criterion NN: PASS/FAIL" line carrying the numbers, and asserts on the
pinned thresholds, so `pytest -v` reads as one verdict per criterion.
Benchmark-scale criteria (07, 08) run the full campaign grid and take
minutes; everything else is seconds.
"""

import collections
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from moba.direction import min_norm_simplex
from moba.gmoba import SolverConfig, SolverState, gmoba_step, lyapunov, solve
from moba.harness import ExperimentConfig, emit, load_config, run_campaign
from moba.l2o import (LOSS_IDS, TrainConfig, init_params, l2o_then_gmoba,
                      loss_gradient, train)
from moba.metrics import gd, purity, sp, spread_delta, spread_gamma
from moba.moml import itd_hypergradient
from moba.pareto_front import nondominated_filter, sweep_front
from moba.problem import (ProblemDims, compute_constants, generate_instance,
                          recommend_steps)
from moba.seeding import derive_seed

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def verdict(num: int, failures: list, detail: str):
    status = "PASS" if not failures else "FAIL"
    print(f"criterion {num:02d}: {status} - {detail}")
    assert not failures, f"criterion {num:02d}: " + "; ".join(failures)


def _reasons(rows, method):
    counts = collections.Counter(r.termination for r in rows if r.method == method)
    return dict(sorted(counts.items()))


def _fmt(value, spec=".3f"):
    return "n/a" if value is None else format(value, spec)


# -- 01: exact hypergradients against central differences -------------------

def test_01_exact_hypergradient_matches_finite_differences():
    t0 = time.perf_counter()
    combos = [(n, m) for n in (2, 5, 20) for m in (1, 2, 3)]
    h = 1e-6
    worst = 0.0
    for i in range(20):
        n, m = combos[i % len(combos)]
        inst = generate_instance(ProblemDims(n, n, m), 0.1,
                                 derive_seed("acceptance", 1, i))
        rng = np.random.default_rng(derive_seed("acceptance", 1, i, "x"))
        x = rng.standard_normal(n)
        exact = inst.exact_hypergradients(x)
        fd = np.empty_like(exact)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            fd[:, j] = (inst.reduced_objectives(x + e)
                        - inst.reduced_objectives(x - e)) / (2 * h)
        rel = np.linalg.norm(fd - exact, axis=1) / np.linalg.norm(exact, axis=1)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0

    failures = []
    if worst > 1e-5:
        failures.append(f"max relative gap {worst:.3e} > 1e-5")
    if elapsed >= 5.0:
        failures.append(f"runtime {elapsed:.1f}s >= 5s")
    verdict(1, failures,
            f"max relative gap {worst:.3e} over 20 instances, {elapsed:.2f}s")


# -- 02: front points are fixed points; m = 1 degenerates to prox descent ---

def test_02_fixed_points_and_single_objective_degeneration():
    t0 = time.perf_counter()
    worst_move = 0.0
    for m in (1, 2, 3):
        inst = generate_instance(ProblemDims(10, 10, m), 0.5,
                                 derive_seed("acceptance", 2, m))
        front = sweep_front(inst, None if m == 1 else 21)
        steps = recommend_steps(compute_constants(inst))
        cfg = SolverConfig(alpha=0.01, beta=steps.beta_max, eta=steps.eta_max)
        picks = np.unique(np.linspace(0, len(front) - 1, 3).astype(int))
        for j in picks:
            xb = front.decisions[j]
            state = SolverState(x=xb, y=inst.lower_solution(xb),
                                v=inst.exact_v_star_all(xb))
            new = gmoba_step(inst, state, cfg)
            worst_move = max(worst_move,
                             float(np.abs(new.x - state.x).max()),
                             float(np.abs(new.y - state.y).max()),
                             float(np.abs(new.v - state.v).max()))

    # m = 1: the solver step must equal plain prox-gradient bilevel descent
    worst_gap = 0.0
    for l1 in (None, [0.3]):
        inst = generate_instance(ProblemDims(6, 6, 1), 0.5,
                                 derive_seed("acceptance", 2, "m1"),
                                 l1_weights=l1)
        steps = recommend_steps(compute_constants(inst))
        cfg = SolverConfig(alpha=0.01, beta=steps.beta_max, eta=steps.eta_max)
        rng = np.random.default_rng(derive_seed("acceptance", 2, "m1", "x"))
        x = rng.standard_normal(6)
        y = np.zeros(6)
        v = np.zeros((1, 6))
        state = SolverState(x=x.copy(), y=y.copy(), v=v.copy())
        H = inst.B.T @ inst.B + inst.mu * np.eye(6)
        for _ in range(100):
            z = np.concatenate([x, y])
            w = inst.A[0] @ z + inst.a[0]
            y_next = y - cfg.beta * (H @ y + x)
            v_next = v - cfg.eta * (v @ H - w[6:])
            step = x - cfg.alpha * (w[:6] - v[0])
            if l1 is not None:
                t = cfg.alpha * l1[0]
                step = np.sign(step) * np.maximum(np.abs(step) - t, 0.0)
            x, y, v = step, y_next, v_next
            state = gmoba_step(inst, state, cfg)
            worst_gap = max(worst_gap,
                            float(np.abs(state.x - x).max()),
                            float(np.abs(state.y - y).max()),
                            float(np.abs(state.v - v).max()))
    elapsed = time.perf_counter() - t0

    failures = []
    if worst_move > 1e-10:
        failures.append(f"largest one-step move at a front point {worst_move:.3e} > 1e-10")
    if worst_gap > 1e-12:
        failures.append(f"m=1 prox-descent gap {worst_gap:.3e} > 1e-12")
    if elapsed >= 5.0:
        failures.append(f"runtime {elapsed:.1f}s >= 5s")
    verdict(2, failures,
            f"front fixed-point move {worst_move:.3e}, m=1 reduction gap "
            f"{worst_gap:.3e}, {elapsed:.2f}s")


# -- 03: per-objective merit descent at the recommended steps ---------------

def test_03_merit_descent_at_recommended_steps():
    t0 = time.perf_counter()
    per_instance = []
    for i in range(5):
        inst = generate_instance(ProblemDims(20, 20, 2), 0.1,
                                 derive_seed("acceptance", 3, i))
        steps = recommend_steps(compute_constants(inst))
        cfg = SolverConfig(alpha=0.0025, beta=steps.beta_max, eta=steps.eta_max,
                           record_history=True, lyapunov_check=True)
        rng = np.random.default_rng(derive_seed("acceptance", 3, i, "start"))
        x0 = rng.standard_normal(20)
        v0 = lyapunov(inst, SolverState(x=x0, y=np.zeros(20),
                                        v=np.zeros((2, 20))))
        rec = solve(inst, x0, config=cfg)
        V = np.vstack([v0, np.array(rec.history["lyapunov"])])
        per_instance.append(float(np.diff(V, axis=0).max()))
    elapsed = time.perf_counter() - t0
    worst = max(per_instance)

    failures = []
    if worst > 1e-10:
        failures.append(
            "merit values increase along the run at alpha=0.0025 with the "
            f"recommended beta/eta; largest one-step increases per instance: "
            f"{[f'{v:.3g}' for v in per_instance]} (need <= 1e-10)")
    if elapsed >= 30.0:
        failures.append(f"runtime {elapsed:.1f}s >= 30s")
    verdict(3, failures,
            f"largest one-step merit increase {worst:.3g} across 5 instances "
            f"(threshold 1e-10), {elapsed:.2f}s")


# -- 04: frozen-coordinate contraction factors ------------------------------

def test_04_frozen_coordinate_contraction_factors():
    t0 = time.perf_counter()
    inst = generate_instance(ProblemDims(20, 20, 2), 0.1,
                             derive_seed("acceptance", 4))
    steps = recommend_steps(compute_constants(inst))
    mu = inst.mu
    H = inst.B.T @ inst.B + mu * np.eye(20)
    rng = np.random.default_rng(derive_seed("acceptance", 4, "starts"))

    worst_y = -math.inf
    worst_v = -math.inf
    for _ in range(100):
        x = rng.standard_normal(20)
        ystar = inst.lower_solution(x)
        y = rng.standard_normal(20)
        for _ in range(5):
            y_next = y - steps.beta_max * inst.grad_lower_y(x, y)
            e0 = float((y - ystar) @ (y - ystar))
            e1 = float((y_next - ystar) @ (y_next - ystar))
            worst_y = max(worst_y, e1 - (1.0 - mu * steps.beta_max) * e0)
            y = y_next

        vstar = inst.exact_v_star_all(x)
        _, _, Gy = inst.upper_eval(x, ystar)
        v = rng.standard_normal((2, 20))
        for _ in range(5):
            v_next = v - steps.eta_max * (v @ H - Gy)
            e0 = ((v - vstar) ** 2).sum(axis=1)
            e1 = ((v_next - vstar) ** 2).sum(axis=1)
            worst_v = max(worst_v,
                          float((e1 - (1.0 - steps.eta_max * mu) * e0).max()))
            v = v_next
    elapsed = time.perf_counter() - t0

    failures = []
    if worst_y > 1e-12:
        failures.append(f"y-iteration violates the (1 - mu beta) squared-error "
                        f"factor by {worst_y:.3e} (allowance 1e-12)")
    if worst_v > 1e-12:
        failures.append(f"v-iteration violates the (1 - eta mu) squared-error "
                        f"factor by {worst_v:.3e} (allowance 1e-12)")
    if elapsed >= 5.0:
        failures.append(f"runtime {elapsed:.1f}s >= 5s")
    verdict(4, failures,
            f"worst factor excess: y {worst_y:.3e}, v {worst_v:.3e} "
            f"(allowance 1e-12), {elapsed:.2f}s")


# -- 05: minimum-norm weights against a simplex mesh ------------------------

def test_05_min_norm_weights_beat_simplex_grid():
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed("acceptance", 5))
    ts = np.linspace(0.0, 1.0, 101)
    W2 = np.stack([ts, 1.0 - ts], axis=1)
    W3 = np.array([(i, j, 100 - i - j) for i in range(101)
                   for j in range(101 - i)], float) / 100.0

    worst_excess = -math.inf
    worst_pair_gap = -math.inf
    for trial in range(1000):
        m = 2 if trial % 2 == 0 else 3
        n = int(rng.integers(2, 9))
        D = rng.standard_normal((m, n)) * 10.0 ** rng.integers(-2, 3)
        lam = min_norm_simplex(D)
        val = float(((lam @ D) ** 2).sum())
        W = W2 if m == 2 else W3
        gvals = ((W @ D) ** 2).sum(axis=1)
        worst_excess = max(worst_excess, val - float(gvals.min()))
        if m == 2:
            # refine the grid around its argmin down to mesh 1e-6; the
            # two-point closed form has to land on the same value
            t_best = float(ts[gvals.argmin()])
            best = float(gvals.min())
            width = 0.01
            for _ in range(3):
                cand = np.clip(np.linspace(t_best - width, t_best + width, 201),
                               0.0, 1.0)
                cv = ((cand[:, None] * D[0] + (1.0 - cand)[:, None] * D[1]) ** 2
                      ).sum(axis=1)
                t_best = float(cand[cv.argmin()])
                best = min(best, float(cv.min()))
                width /= 100.0
            worst_pair_gap = max(worst_pair_gap, abs(val - best))
    elapsed = time.perf_counter() - t0

    failures = []
    if worst_excess > 1e-8:
        failures.append(f"solver exceeds the mesh-0.01 grid by "
                        f"{worst_excess:.3e} (allowance 1e-8)")
    if worst_pair_gap > 1e-6:
        failures.append(f"m=2 closed form differs from the refined grid by "
                        f"{worst_pair_gap:.3e} (allowance 1e-6)")
    if elapsed >= 10.0:
        failures.append(f"runtime {elapsed:.1f}s >= 10s")
    verdict(5, failures,
            f"worst excess over coarse grid {worst_excess:.3e}, worst m=2 "
            f"refined-grid gap {worst_pair_gap:.3e}, {elapsed:.2f}s")


# -- 06: set metrics against double-loop references --------------------------

def _ref_min_dists(Y_N, Y_P):
    return [min(math.dist(y, p) for p in Y_P) for y in Y_N]


def _ref_gaps(Y_N, Y_P, j):
    col = sorted(y[j] for y in Y_N)
    gaps = [col[i + 1] - col[i] for i in range(len(col) - 1)]
    lo = max(col[0] - min(p[j] for p in Y_P), 0.0)
    hi = max(max(p[j] for p in Y_P) - col[-1], 0.0)
    return lo, gaps, hi


def test_06_metrics_match_double_loop_references():
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed("acceptance", 6))
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 4))
        Y_N = rng.standard_normal((int(rng.integers(2, 51)), m))
        Y_P = rng.standard_normal((int(rng.integers(2, 51)), m))
        dists = _ref_min_dists(Y_N, Y_P)

        ref_purity = sum(d <= 0.5 for d in dists) / len(Y_N)
        ref_gd = math.sqrt(sum(d * d for d in dists)) / len(Y_N)
        ref_gamma = 0.0
        ref_delta = 0.0
        for j in range(m):
            lo, gaps, hi = _ref_gaps(Y_N, Y_P, j)
            ref_gamma = max([ref_gamma, lo, hi] + gaps)
            dbar = sum(gaps) / len(gaps)
            num = lo + hi + sum(abs(g - dbar) for g in gaps)
            den = lo + hi + len(gaps) * dbar
            ref_delta = max(ref_delta, num / den if den > 0 else 0.0)
        d1 = [min(sum(abs(a - b) for a, b in zip(y, z))
                  for k, z in enumerate(Y_N) if k != i)
              for i, y in enumerate(Y_N)]
        dbar = sum(d1) / len(d1)
        ref_sp = math.sqrt(sum((dbar - d) ** 2 for d in d1) / (len(d1) - 1))

        worst = max(worst,
                    abs(purity(Y_N, Y_P, 0.5) - ref_purity),
                    abs(gd(Y_N, Y_P) - ref_gd),
                    abs(spread_gamma(Y_N, Y_P) - ref_gamma),
                    abs(spread_delta(Y_N, Y_P) - ref_delta),
                    abs(sp(Y_N) - ref_sp))

    hand = (
        purity(np.array([[0.05, 0.0], [3.0, 3.0]]),
               np.array([[0.0, 0.0], [1.0, 1.0]]), 0.1) == 0.5,
        gd(np.array([[3.0, 4.0], [0.0, 0.0]]), np.array([[0.0, 0.0]])) == 2.5,
        spread_gamma(np.array([[2.0, 8.0], [5.0, 5.0], [9.0, 1.0]]),
                     np.array([[0.0, 10.0], [10.0, 0.0]])) == 4.0,
        spread_delta(np.array([[0.0, 3.0], [1.0, 2.0], [2.0, 1.0], [3.0, 0.0]]),
                     np.array([[0.0, 3.0], [3.0, 0.0]])) == 0.0,
        sp(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [4.0, 4.0]])) == 1.0,
    )
    elapsed = time.perf_counter() - t0

    failures = []
    if worst > 1e-12:
        failures.append(f"worst metric gap vs double-loop references "
                        f"{worst:.3e} > 1e-12")
    if not all(hand):
        failures.append(f"hand-computed examples not exact: {hand}")
    if elapsed >= 5.0:
        failures.append(f"runtime {elapsed:.1f}s >= 5s")
    verdict(6, failures,
            f"worst reference gap {worst:.3e} over 100 sets, hand examples "
            f"exact: {all(hand)}, {elapsed:.2f}s")


# -- 07: two-objective benchmark quality -------------------------------------

def test_07_two_objective_benchmark_quality():
    cfg = load_config(SCRIPTS / "benchmark_two_objectives.cfg")
    t0 = time.perf_counter()
    res = run_campaign(cfg)
    elapsed = time.perf_counter() - t0

    g = {k: res.aggregates["gmoba"][k]["mean"]
         for k in ("purity", "dp_mean", "feasibility_mean")}
    b = {k: res.aggregates["moml"][k]["mean"]
         for k in ("purity", "dp_mean")}

    failures = []
    if g["purity"] is None or g["purity"] < 0.90:
        failures.append(f"gmoba purity {_fmt(g['purity'])} < 0.90")
    if g["dp_mean"] is None or g["dp_mean"] > 0.15:
        failures.append(f"gmoba dp {_fmt(g['dp_mean'])} > 0.15")
    if g["feasibility_mean"] is None or g["feasibility_mean"] > 5e-2:
        failures.append(f"gmoba feasibility {_fmt(g['feasibility_mean'], '.4f')} > 0.05")
    if g["purity"] is None or b["purity"] is None or not b["purity"] < g["purity"]:
        failures.append(f"moml purity {_fmt(b['purity'])} not strictly below "
                        f"gmoba purity {_fmt(g['purity'])}")
    if g["dp_mean"] is None or b["dp_mean"] is None \
            or not b["dp_mean"] >= 5.0 * g["dp_mean"]:
        failures.append(f"moml dp {_fmt(b['dp_mean'])} below 5x gmoba dp "
                        f"{_fmt(g['dp_mean'])}")
    if elapsed >= 600.0:
        failures.append(f"runtime {elapsed:.0f}s >= 600s")
    verdict(7, failures,
            f"gmoba purity {_fmt(g['purity'])} dp {_fmt(g['dp_mean'])} feas "
            f"{_fmt(g['feasibility_mean'], '.4f')}; moml purity {_fmt(b['purity'])} "
            f"dp {_fmt(b['dp_mean'])}; stops gmoba {_reasons(res.rows, 'gmoba')} "
            f"moml {_reasons(res.rows, 'moml')}; {elapsed:.0f}s")


# -- 08: three-objective benchmark quality ------------------------------------

def test_08_three_objective_benchmark_quality():
    cfg = load_config(SCRIPTS / "benchmark_three_objectives.cfg")
    t0 = time.perf_counter()
    res = run_campaign(cfg)
    elapsed = time.perf_counter() - t0

    g_purity = res.aggregates["gmoba"]["purity"]["mean"]
    g_dp = res.aggregates["gmoba"]["dp_mean"]["mean"]
    b_purity = res.aggregates["moml"]["purity"]["mean"]

    failures = []
    if g_purity is None or b_purity is None or not g_purity > b_purity:
        failures.append(f"gmoba purity {_fmt(g_purity)} not above moml purity "
                        f"{_fmt(b_purity)}")
    if g_dp is None or g_dp > 0.3:
        failures.append(f"gmoba dp {_fmt(g_dp)} > 0.3")
    if elapsed >= 1200.0:
        failures.append(f"runtime {elapsed:.0f}s >= 1200s")
    verdict(8, failures,
            f"gmoba purity {_fmt(g_purity)} dp {_fmt(g_dp)}; moml purity "
            f"{_fmt(b_purity)}; stops gmoba {_reasons(res.rows, 'gmoba')} "
            f"moml {_reasons(res.rows, 'moml')}; {elapsed:.0f}s")


# -- 09: unrolled adjoint gradients against finite differences ---------------

def test_09_unrolled_adjoint_matches_finite_differences():
    t0 = time.perf_counter()
    inst = generate_instance(ProblemDims(5, 5, 2), 0.1,
                             derive_seed("acceptance", 9))
    rng = np.random.default_rng(derive_seed("acceptance", 9, "draws"))
    params = init_params(10, 2, random_init=True, rng=rng)
    x0 = rng.standard_normal(5)
    p = np.array([0.3, 0.7])

    worst = 0.0
    for loss_id in LOSS_IDS:
        ga_l, ga_g = loss_gradient(inst, params, x0, p, loss_id, mode="adjoint")
        gf_l, gf_g = loss_gradient(inst, params, x0, p, loss_id, mode="fd")
        diff = np.concatenate([(ga_l - gf_l).ravel(), ga_g - gf_g])
        ref = np.concatenate([gf_l.ravel(), gf_g])
        worst = max(worst, float(np.linalg.norm(diff) / np.linalg.norm(ref)))
    elapsed = time.perf_counter() - t0

    failures = []
    if worst > 1e-4:
        failures.append(f"adjoint vs finite-difference relative gap "
                        f"{worst:.3e} > 1e-4")
    if elapsed >= 30.0:
        failures.append(f"runtime {elapsed:.1f}s >= 30s")
    verdict(9, failures,
            f"worst relative gap {worst:.3e} across losses {LOSS_IDS}, "
            f"{elapsed:.2f}s")


# -- 10: trained preamble helps ----------------------------------------------

def test_10_trained_preamble_reaches_plain_quality_with_fewer_iterations():
    inst = generate_instance(ProblemDims(5, 5, 2), 0.1,
                             derive_seed("acceptance", 10))
    front = sweep_front(inst)
    cfg = SolverConfig()
    tc = TrainConfig(layers=100, train_iters=2000, learn_rate=0.01,
                     loss_id="L1", seed=derive_seed("acceptance", 11),
                     alpha=cfg.alpha, beta=cfg.beta, eta=cfg.eta,
                     grad_mode="adjoint")
    tr = train(inst, tc)

    rng = np.random.default_rng(derive_seed("acceptance", 12))
    starts = rng.standard_normal((100, 5))
    plain = [solve(inst, x0, config=cfg, front=front) for x0 in starts]
    warm = [l2o_then_gmoba(inst, tr.params, x0, cfg, front) for x0 in starts]

    def summarize(recs):
        finals = np.array([r.state.last_F for r in recs
                           if r.reason != "divergence"])
        yn = finals[nondominated_filter(finals)]
        return purity(yn, front.objectives), float(np.mean([r.iterations
                                                            for r in recs]))

    purity_plain, iters_plain = summarize(plain)
    purity_warm, iters_warm = summarize(warm)

    failures = []
    if tr.diverged:
        failures.append("training diverged")
    if tr.time_s > 300.0:
        failures.append(f"training took {tr.time_s:.0f}s > 300s")
    if not purity_warm >= purity_plain - 0.02:
        failures.append(f"trained purity {purity_warm:.3f} below plain "
                        f"{purity_plain:.3f} - 0.02")
    if not iters_warm <= iters_plain:
        failures.append(f"trained mean post-preamble iterations {iters_warm:.1f} "
                        f"above plain {iters_plain:.1f}")
    verdict(10, failures,
            f"purity trained {purity_warm:.3f} vs plain {purity_plain:.3f}, "
            f"mean iterations trained {iters_warm:.1f} vs plain {iters_plain:.1f}, "
            f"training {tr.time_s:.1f}s over {len(tr.loss_history)} updates")


# -- 11: truncated hypergradients --------------------------------------------

def test_11_truncated_hypergradient_matches_differences_and_converges():
    t0 = time.perf_counter()
    inst = generate_instance(ProblemDims(5, 5, 2), 0.1,
                             derive_seed("acceptance", 13))
    rng = np.random.default_rng(derive_seed("acceptance", 13, "x"))
    x = rng.standard_normal(5)
    y0 = rng.standard_normal(5)

    def unrolled_objectives(xq, T, nu):
        y = y0.copy()
        for _ in range(T):
            y = y - nu * inst.grad_lower_y(xq, y)
        return np.array([inst.eval_upper(i, xq, y) for i in range(2)])

    T, nu = 7, 0.01
    grads, _ = itd_hypergradient(inst, x, y0, T, nu)
    fd = np.empty_like(grads)
    h = 1e-6
    for j in range(5):
        e = np.zeros(5)
        e[j] = h
        fd[:, j] = (unrolled_objectives(x + e, T, nu)
                    - unrolled_objectives(x - e, T, nu)) / (2 * h)
    rel_fd = float((np.linalg.norm(fd - grads, axis=1)
                    / np.linalg.norm(fd, axis=1)).max())

    exact = inst.exact_hypergradients(x)
    nu_max = recommend_steps(compute_constants(inst)).eta_max
    scale = np.linalg.norm(exact, axis=1)

    def itd_err(T):
        g, _ = itd_hypergradient(inst, x, y0, T, nu_max)
        return float((np.linalg.norm(g - exact, axis=1) / scale).max())

    err_short, err_long = itd_err(5), itd_err(500)
    elapsed = time.perf_counter() - t0

    failures = []
    if rel_fd > 1e-5:
        failures.append(f"finite-difference gap {rel_fd:.3e} > 1e-5 at T=7")
    if err_long > 1e-3:
        failures.append(f"relative error vs exact {err_long:.3e} > 1e-3 at T=500")
    if not err_long < err_short:
        failures.append(f"error does not shrink with depth: T=5 {err_short:.3e}, "
                        f"T=500 {err_long:.3e}")
    if elapsed >= 30.0:
        failures.append(f"runtime {elapsed:.1f}s >= 30s")
    verdict(11, failures,
            f"FD gap {rel_fd:.3e} at T=7; error vs exact {err_short:.3e} at T=5 "
            f"-> {err_long:.3e} at T=500, {elapsed:.2f}s")


# -- 12: campaign reruns are identical ---------------------------------------

def test_12_campaign_reruns_identical_modulo_timing(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "moba.cli", "campaign",
             "--config", str(SCRIPTS / "smoke.cfg"), "--out", str(out),
             "--threads", "2", "--quiet"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(out)

    first = (outs[0] / "runs.csv").read_text().splitlines()
    second = (outs[1] / "runs.csv").read_text().splitlines()
    header = first[0].split(",")
    t_col = header.index("time_ms")
    diffs = 0
    for a, b in zip(first, second):
        ca, cb = a.split(","), b.split(",")
        del ca[t_col], cb[t_col]
        diffs += ca != cb
    failures = []
    if len(first) != len(second):
        failures.append(f"row counts differ: {len(first)} vs {len(second)}")
    if diffs:
        failures.append(f"{diffs} rows differ outside time_ms")
    verdict(12, failures,
            f"two runs of the smoke campaign: {len(first) - 1} rows, "
            f"{diffs} non-timing differences")
