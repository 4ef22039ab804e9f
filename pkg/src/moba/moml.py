"""Truncated iterative-differentiation baseline.

Each outer iteration runs T inner gradient steps on the lower level from a
warm start, differentiates through that truncated trajectory in reverse
mode to get per-objective hypergradient estimates, combines them with the
minimum-norm weights, and takes a plain gradient step in x.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .direction import min_norm_simplex
from .gmoba import RunRecord, SolverState, _diverged, _dp_to_front


@dataclass
class MomlConfig:
    inner_steps: int = 5
    inner_lr: float = 0.01
    outer_lr: float = 1.0
    max_iters: int = 100_000
    tol_obj_change: float = 1e-4
    tol_dp: float | None = 0.05
    record_history: bool = False

    def __post_init__(self):
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be at least 1")
        if self.inner_lr <= 0 or self.outer_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


def itd_hypergradient(inst, x, y_init, T: int, nu: float):
    """Reverse-mode gradients of x -> F_i(x, y_T(x)) through T inner steps.

    Forward: y_{t+1} = y_t - nu * grad_y f(x, y_t), with y_init treated as
    a constant. Backward per objective:

        p_T = grad_y F_i(x, y_T)
        p_t = (I - nu * hess_yy f(x, y_t)) p_{t+1}
        grad = grad_x F_i(x, y_T) - nu * sum_t cross_xy f(x, y_t) p_{t+1}

    Returns (grads, y_T) with grads stacked (m, n_x).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if nu <= 0:
        raise ValueError("nu must be positive")
    x = np.asarray(x, float)
    y = np.asarray(y_init, float)
    traj = [y]
    for _ in range(T):
        y = y - nu * inst.grad_lower_y(x, y)
        traj.append(y)
    _, Gx, Gy = inst.upper_eval(x, traj[-1])
    P = Gy
    acc = np.zeros_like(Gx)
    for t in range(T - 1, -1, -1):
        acc += inst.cross_xy_mat(x, traj[t], P)
        P = P - nu * inst.hess_yy_mat(x, traj[t], P)
    return Gx - nu * acc, traj[-1]


def moml_solve(inst, x0, y0=None, config: MomlConfig | None = None,
               front=None) -> RunRecord:
    """Outer descent on the truncated hypergradients, warm-starting y.

    Stopping rules match the single-loop solver: objective change below
    tol_obj_change, distance to an attached front below tol_dp, the
    iteration cap, or divergence.
    """
    cfg = config if config is not None else MomlConfig()
    dims = inst.dims
    x = np.asarray(x0, float)
    y = np.zeros(dims.n_y) if y0 is None else np.asarray(y0, float)
    if x.shape != (dims.n_x,) or y.shape != (dims.n_y,):
        raise ValueError("start point shapes do not match the problem dimensions")

    front_Z = front_sq = None
    front_max = 0.0
    if front is not None:
        front_Z = front.decision_points(inst)
        front_sq = (front_Z * front_Z).sum(axis=1)
        front_max = float(np.sqrt(front_sq.max())) if front_sq.size else 0.0

    hist = {"F": [], "step_norm": []} if cfg.record_history else None

    m = dims.m
    prev_F, _, _ = inst.upper_eval(x, y)
    t_start = time.perf_counter()
    parallel = 0.0
    reason = "max-iters"
    k = 0
    lam = np.full(m, 1.0 / m)
    for k in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        grads, y_T = itd_hypergradient(inst, x, y, cfg.inner_steps, cfg.inner_lr)
        t1 = time.perf_counter()
        lam = min_norm_simplex(grads)
        x_new = x - cfg.outer_lr * (lam @ grads)
        t2 = time.perf_counter()
        # the m backward passes are independent, so under the parallel-time
        # convention each outer iteration charges 1/m of the batched
        # differentiation plus the shared pieces
        parallel += (t1 - t0) / m + (t2 - t1)
        dx = float(np.linalg.norm(x_new - x))
        x, y = x_new, y_T
        F, _, _ = inst.upper_eval(x, y)
        state = SolverState(x=x, y=y, v=np.zeros((m, dims.n_y)), k=k, last_F=F)
        if _diverged(state):
            reason = "divergence"
            break
        if hist is not None:
            hist["F"].append(F)
            hist["step_norm"].append(dx)
        if float(np.max(np.abs(F - prev_F))) < cfg.tol_obj_change:
            reason = "objective-change"
            break
        prev_F = F
        if front_Z is not None and cfg.tol_dp is not None:
            # same exact gate as the single-loop driver: dist >= ||x|| minus
            # the largest front norm
            if float(np.linalg.norm(x)) <= cfg.tol_dp * dims.n_x + front_max:
                if _dp_to_front(inst, front_Z, front_sq, x) < cfg.tol_dp:
                    reason = "dp"
                    break

    F, _, _ = inst.upper_eval(x, y)
    final = SolverState(x=x, y=y, v=np.zeros((m, dims.n_y)), k=k, last_F=F)
    wall = time.perf_counter() - t_start
    return RunRecord(state=final, reason=reason, iterations=k,
                     wall_time_s=wall, parallel_time_s=parallel, history=hist)


def moml_solve_batch(inst, X0, config: MomlConfig | None = None,
                     front=None) -> list:
    """Run moml_solve for every row of X0 at once; one RunRecord each.

    Same restrictions and timing conventions as the batched single-loop
    driver: quadratic family only, no history, per-iteration times shared
    equally among active runs.
    """
    from .direction import min_norm_simplex_batch
    from .gmoba import _DIVERGENCE_NORM, _batch_eval

    cfg = config if config is not None else MomlConfig()
    if cfg.record_history:
        raise ValueError("history recording is only available in the scalar driver")
    if inst.l1_weights is not None:
        raise ValueError("the batched driver supports smooth objectives only")
    dims = inst.dims
    n, m = dims.n_x, dims.m
    Xa = np.array(X0, float)
    if Xa.ndim != 2 or Xa.shape[1] != n:
        raise ValueError("X0 must stack start points as rows")
    B = Xa.shape[0]
    Ya = np.zeros((B, n))
    H = inst.hess_lower
    nu, T = cfg.inner_lr, cfg.inner_steps
    div2 = _DIVERGENCE_NORM * _DIVERGENCE_NORM

    front_Z = front_sq = None
    bound2 = 0.0
    if front is not None and cfg.tol_dp is not None:
        front_Z = front.decision_points(inst)
        front_sq = (front_Z * front_Z).sum(axis=1)
        front_max = float(np.sqrt(front_sq.max())) if front_sq.size else 0.0
        bound2 = (cfg.tol_dp * n + front_max) ** 2

    Fa, _, _ = _batch_eval(inst, Xa, Ya)
    outX = np.empty((B, n))
    outY = np.empty((B, n))
    outF = np.empty((B, m))
    reasons = ["max-iters"] * B
    iters = np.full(B, cfg.max_iters)
    par_done = np.empty(B)
    wall_done = np.empty(B)
    act = np.arange(B)
    cum_par = 0.0
    cum_wall = 0.0

    for k in range(1, cfg.max_iters + 1):
        Ba = act.size
        if Ba == 0:
            break
        t0 = time.perf_counter()
        Yt = Ya
        for _ in range(T):
            Yt = Yt - nu * (Yt @ H + Xa)
        _, Gx, Gy = _batch_eval(inst, Xa, Yt)
        P = Gy
        acc = np.zeros_like(Gx)
        for _ in range(T - 1, -1, -1):
            acc += P  # identity cross-partial
            P = P - nu * (P.reshape(-1, n) @ H).reshape(Ba, m, n)
        grads = Gx - nu * acc
        t1 = time.perf_counter()
        lam = min_norm_simplex_batch(grads)
        Xn = Xa - cfg.outer_lr * np.einsum("bi,bin->bn", lam, grads)
        t2 = time.perf_counter()
        Yn = Yt
        Fn, _, _ = _batch_eval(inst, Xn, Yn)

        sx2 = np.einsum("ij,ij->i", Xn, Xn)
        sy2 = np.einsum("ij,ij->i", Yn, Yn)
        bad = (~np.isfinite(Fn).all(axis=1) | ~(sx2 <= div2) | ~(sy2 <= div2))
        settled = ~bad & (np.abs(Fn - Fa).max(axis=1) < cfg.tol_obj_change)
        stop = bad | settled
        if front_Z is not None:
            cand = np.flatnonzero(~stop & (sx2 <= bound2))
            if cand.size:
                Xc = Xn[cand]
                Zc = np.hstack([Xc, inst.lower_solution_many(Xc)])
                d2 = ((Zc * Zc).sum(axis=1)[:, None] - 2.0 * (Zc @ front_Z.T)
                      + front_sq)
                dpv = np.sqrt(np.maximum(d2.min(axis=1), 0.0)) / n
                hit = cand[dpv < cfg.tol_dp]
                if hit.size:
                    attached = np.zeros(Ba, bool)
                    attached[hit] = True
                    stop = stop | attached

        cum_par += ((t1 - t0) / m + (t2 - t1)) / Ba
        cum_wall += (time.perf_counter() - t0) / Ba

        if stop.any():
            frozen = np.flatnonzero(stop)
            orig = act[frozen]
            outX[orig], outY[orig], outF[orig] = Xn[frozen], Yn[frozen], Fn[frozen]
            iters[orig] = k
            par_done[orig] = cum_par
            wall_done[orig] = cum_wall
            for i in frozen:
                if bad[i]:
                    reasons[act[i]] = "divergence"
                elif settled[i]:
                    reasons[act[i]] = "objective-change"
                else:
                    reasons[act[i]] = "dp"
            keep = ~stop
            act = act[keep]
            Xa, Ya, Fa = Xn[keep], Yn[keep], Fn[keep]
        else:
            Xa, Ya, Fa = Xn, Yn, Fn

    if act.size:
        outX[act], outY[act], outF[act] = Xa, Ya, Fa
        par_done[act] = cum_par
        wall_done[act] = cum_wall

    records = []
    for b in range(B):
        state = SolverState(x=outX[b], y=outY[b], v=np.zeros((m, n)),
                            k=int(iters[b]), last_F=outF[b])
        records.append(RunRecord(state=state, reason=reasons[b],
                                 iterations=int(iters[b]),
                                 wall_time_s=float(wall_done[b]),
                                 parallel_time_s=float(par_done[b])))
    return records
