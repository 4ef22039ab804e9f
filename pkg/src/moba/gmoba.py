"""Single-loop multi-objective bilevel solver.

Every iteration reads only iteration-k state and performs three independent
updates that could run in parallel:

    y^{k+1}   = y^k - beta * grad_y f(x^k, y^k)
    v_i^{k+1} = v_i^k - eta * (hess_yy f(x^k, y^k) v_i^k - grad_y F_i(x^k, y^k))
    x^{k+1}   = prox step along d_i = grad_x F_i(x^k, y^k) - cross_xy f v_i^k

where the x step solves the simplex-dual subproblem from
:mod:`moba.direction`. The v_i track the adjoint solutions, so the d_i
converge to the true hypergradients without any inner loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .direction import DirectionResult, min_norm_simplex_batch, solve_x_subproblem

_DIVERGENCE_NORM = 1e12


@dataclass
class SolverConfig:
    alpha: float = 0.0025
    beta: float = 1.0
    eta: float = 0.1
    max_iters: int = 100_000
    tol_obj_change: float = 1e-4
    tol_dp: float | None = 0.05
    record_history: bool = False
    lyapunov_check: bool = False

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.eta <= 0:
            raise ValueError("step sizes must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol_obj_change < 0:
            raise ValueError("tol_obj_change must be nonnegative")
        if self.tol_dp is not None and self.tol_dp < 0:
            raise ValueError("tol_dp must be nonnegative when set")


@dataclass
class SolverState:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray  # (m, n_y)
    k: int = 0
    last_F: np.ndarray | None = None  # objective values at (x, y)
    d_phi: np.ndarray | None = None  # directions used to produce this state
    last_direction: DirectionResult | None = field(default=None, repr=False)
    _grads: tuple | None = field(default=None, repr=False, compare=False)
    _times: tuple | None = field(default=None, repr=False, compare=False)


@dataclass
class RunRecord:
    state: SolverState
    reason: str  # objective-change | dp | max-iters | divergence
    iterations: int
    wall_time_s: float
    parallel_time_s: float
    history: dict | None = None
    preamble_iters: int = 0
    preamble_time_s: float = 0.0


def _eval_state(inst, state: SolverState):
    """Objective values and gradient blocks at the state, cached on it."""
    if state._grads is None:
        t0 = time.perf_counter()
        F, Gx, Gy = inst.upper_eval(state.x, state.y)
        dt = time.perf_counter() - t0
        state._grads = (F, Gx, Gy, dt)
        state.last_F = F
    return state._grads


def gmoba_step(inst, state: SolverState, config: SolverConfig) -> SolverState:
    """One iteration; pure in (inst, state, config).

    All three updates are computed from the incoming state before any of
    them is applied.
    """
    F, Gx, Gy, t_eval = _eval_state(inst, state)
    x, y, v = state.x, state.y, state.v

    t0 = time.perf_counter()
    y_next = y - config.beta * inst.grad_lower_y(x, y)
    t1 = time.perf_counter()
    d_v = inst.hess_yy_mat(x, y, v) - Gy
    v_next = v - config.eta * d_v
    t2 = time.perf_counter()
    d_phi = Gx - inst.cross_xy_mat(x, y, v)
    result = solve_x_subproblem(x, d_phi, config.alpha, l1_weights=inst.l1_weights)
    t3 = time.perf_counter()

    new = SolverState(x=result.x_next, y=y_next, v=v_next, k=state.k + 1,
                      d_phi=d_phi, last_direction=result)
    _eval_state(inst, new)
    # per-update timings (y, v, x) plus the shared gradient evaluation,
    # kept so the driver can report the parallel-time convention
    new._times = (t1 - t0, t2 - t1, t3 - t2, t_eval)
    return new


def _diverged(state: SolverState) -> bool:
    if not np.all(np.isfinite(state.last_F)):
        return True
    for arr in (state.x, state.y, state.v):
        if not np.all(np.isfinite(arr)) or np.linalg.norm(arr) > _DIVERGENCE_NORM:
            return True
    return False


def _dp_to_front(inst, front_Z, front_sq, x) -> float:
    z = np.concatenate([x, inst.lower_solution(x)])
    d2 = front_sq - 2.0 * (front_Z @ z) + z @ z
    return float(np.sqrt(max(d2.min(), 0.0)) / inst.dims.n_x)


def solve(inst, x0, y0=None, v0=None, config: SolverConfig | None = None,
          front=None) -> RunRecord:
    """Run the single-loop solver until a stopping rule fires.

    Stopping rules: max_i |F_i(x^{k+1}, y^{k+1}) - F_i(x^k, y^k)| below
    tol_obj_change; distance of (x, y*(x)) to the attached front below
    tol_dp (only when ``front`` is given); the iteration cap; or a
    divergence guard on non-finite values / state norms above 1e12.
    """
    cfg = config if config is not None else SolverConfig()
    dims = inst.dims
    x0 = np.asarray(x0, float)
    y0 = np.zeros(dims.n_y) if y0 is None else np.asarray(y0, float)
    v0 = np.zeros((dims.m, dims.n_y)) if v0 is None else np.asarray(v0, float)
    if x0.shape != (dims.n_x,) or y0.shape != (dims.n_y,) or v0.shape != (dims.m, dims.n_y):
        raise ValueError("start point shapes do not match the problem dimensions")

    front_Z = front_sq = None
    front_max = 0.0
    if front is not None:
        front_Z = front.decision_points(inst)
        front_sq = (front_Z * front_Z).sum(axis=1)
        front_max = float(np.sqrt(front_sq.max())) if front_sq.size else 0.0

    hist = None
    if cfg.record_history:
        hist = {"F": [], "step_norm": [], "stationarity": []}
        if cfg.lyapunov_check:
            hist["lyapunov"] = []

    state = SolverState(x=x0, y=y0, v=v0)
    t_start = time.perf_counter()
    _eval_state(inst, state)
    parallel = 0.0
    reason = "max-iters"
    for _ in range(cfg.max_iters):
        prev_F = state.last_F
        new = gmoba_step(inst, state, cfg)
        t_y, t_v, t_x, t_eval = new._times
        parallel += max(t_y, t_eval + t_v, t_eval + t_x)
        dx = float(np.linalg.norm(new.x - state.x))
        state = new
        if _diverged(state):
            reason = "divergence"
            break
        if hist is not None:
            hist["F"].append(state.last_F)
            hist["step_norm"].append(dx)
            hist["stationarity"].append(dx / cfg.alpha)
            if cfg.lyapunov_check:
                hist["lyapunov"].append(lyapunov(inst, state))
        if float(np.max(np.abs(state.last_F - prev_F))) < cfg.tol_obj_change:
            reason = "objective-change"
            break
        if front_Z is not None and cfg.tol_dp is not None:
            # cheap exact gate: dist >= ||x|| - max front norm, so far-away
            # iterates skip the full nearest-point scan
            bound = cfg.tol_dp * inst.dims.n_x + front_max
            if float(np.linalg.norm(state.x)) <= bound:
                if _dp_to_front(inst, front_Z, front_sq, state.x) < cfg.tol_dp:
                    reason = "dp"
                    break
    wall = time.perf_counter() - t_start
    return RunRecord(state=state, reason=reason, iterations=state.k,
                     wall_time_s=wall, parallel_time_s=parallel, history=hist)


def _batch_eval(inst, X, Y):
    """Objectives and gradient blocks for a whole batch in three gemms."""
    n = inst.dims.n_x
    Z = np.hstack([X, Y])
    W = (Z @ inst._A_flat.T).reshape(X.shape[0], inst.dims.m, -1) + inst.a
    F = 0.5 * np.einsum("bmd,bd->bm", W, Z) + 0.5 * (Z @ inst.a.T)
    return F, W[:, :, :n], W[:, :, n:]


def solve_batch(inst, X0, config: SolverConfig | None = None, front=None) -> list:
    """Run solve() for every row of X0 at once; returns one RunRecord each.

    The state update, stopping checks, and reason strings are the same as
    the scalar driver, applied row-wise with finished runs frozen, so the
    outputs match per-start solve() calls up to BLAS accumulation order.
    Needs the quadratic family (constant Hessian blocks, identity
    cross-partial), smooth upper objectives, and no history recording.
    Timing columns share each batched iteration equally among the runs
    still active in it.
    """
    cfg = config if config is not None else SolverConfig()
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
    Va = np.zeros((B, m, n))
    H = inst.hess_lower
    A_T = inst._A_flat.T
    a = inst.a
    div2 = _DIVERGENCE_NORM * _DIVERGENCE_NORM

    front_Z = front_sq = None
    bound2 = 0.0
    if front is not None and cfg.tol_dp is not None:
        front_Z = front.decision_points(inst)
        front_sq = (front_Z * front_Z).sum(axis=1)
        front_max = float(np.sqrt(front_sq.max())) if front_sq.size else 0.0
        bound2 = (cfg.tol_dp * n + front_max) ** 2

    def evaluate(X, Y):
        Z = np.empty((X.shape[0], 2 * n))
        Z[:, :n] = X
        Z[:, n:] = Y
        W = (Z @ A_T).reshape(X.shape[0], m, 2 * n) + a
        F = 0.5 * np.einsum("bmd,bd->bm", W, Z) + 0.5 * (Z @ a.T)
        return F, W[:, :, :n], W[:, :, n:]

    outX = np.empty((B, n))
    outY = np.empty((B, n))
    outV = np.empty((B, m, n))
    outF = np.empty((B, m))
    reasons = ["max-iters"] * B
    iters = np.full(B, cfg.max_iters)
    par_done = np.empty(B)
    wall_done = np.empty(B)
    act = np.arange(B)

    t0 = time.perf_counter()
    Fa, Gx, Gy = evaluate(Xa, Ya)
    # per-row share of the eval behind the current gradients; the v/x
    # updates wait on it, the y update does not (matches gmoba_step)
    eval_share = (time.perf_counter() - t0) / B
    cum_par = 0.0
    cum_wall = eval_share

    for k in range(1, cfg.max_iters + 1):
        Ba = act.size
        if Ba == 0:
            break
        t0 = time.perf_counter()
        Yn = Ya - cfg.beta * (Ya @ H + Xa)
        t1 = time.perf_counter()
        Vn = Va - cfg.eta * ((Va.reshape(-1, n) @ H).reshape(Ba, m, n) - Gy)
        t2 = time.perf_counter()
        D = Gx - Va
        lam = min_norm_simplex_batch(D)
        Xn = Xa - cfg.alpha * np.einsum("bi,bin->bn", lam, D)
        t3 = time.perf_counter()
        Fn, Gx, Gy = evaluate(Xn, Yn)
        t4 = time.perf_counter()

        sx2 = np.einsum("ij,ij->i", Xn, Xn)
        sy2 = np.einsum("ij,ij->i", Yn, Yn)
        Vf = Vn.reshape(Ba, -1)
        sv2 = np.einsum("ij,ij->i", Vf, Vf)
        # ~(s <= div2) also catches nan; overflow to inf in the squared
        # sums implies the sequential norm check would have tripped too
        bad = (~np.isfinite(Fn).all(axis=1)
               | ~(sx2 <= div2) | ~(sy2 <= div2) | ~(sv2 <= div2))
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

        cum_par += max((t1 - t0) / Ba,
                       eval_share + max(t2 - t1, t3 - t2) / Ba)
        eval_share = (t4 - t3) / Ba
        cum_wall += (time.perf_counter() - t0) / Ba

        if stop.any():
            frozen = np.flatnonzero(stop)
            orig = act[frozen]
            outX[orig], outY[orig], outV[orig], outF[orig] = (
                Xn[frozen], Yn[frozen], Vn[frozen], Fn[frozen])
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
            Xa, Ya, Va, Fa = Xn[keep], Yn[keep], Vn[keep], Fn[keep]
            Gx, Gy = Gx[keep], Gy[keep]
        else:
            Xa, Ya, Va, Fa = Xn, Yn, Vn, Fn

    if act.size:
        outX[act], outY[act], outV[act], outF[act] = Xa, Ya, Va, Fa
        par_done[act] = cum_par
        wall_done[act] = cum_wall

    records = []
    for b in range(B):
        state = SolverState(x=outX[b], y=outY[b], v=outV[b], k=int(iters[b]),
                            last_F=outF[b])
        records.append(RunRecord(state=state, reason=reasons[b],
                                 iterations=int(iters[b]),
                                 wall_time_s=float(wall_done[b]),
                                 parallel_time_s=float(par_done[b])))
    return records


def lyapunov(inst, state: SolverState) -> np.ndarray:
    """Per-objective merit values Phi_i(x) + ||y - y*(x)||^2 + ||v_i - v_i*(x)||^2."""
    phi = inst.reduced_objectives(state.x)
    y_err = state.y - inst.lower_solution(state.x)
    v_err = state.v - inst.exact_v_star_all(state.x)
    return phi + y_err @ y_err + (v_err * v_err).sum(axis=1)


def hypergradient_error(inst, state: SolverState) -> np.ndarray:
    """Norms of the gap between the running directions and the true hypergradients.

    The running directions are recomputed from the state's own (x, y, v) so
    the result does not depend on cached step data.
    """
    _, Gx, _ = inst.upper_eval(state.x, state.y)
    d_phi = Gx - inst.cross_xy_mat(state.x, state.y, state.v)
    exact = inst.exact_hypergradients(state.x)
    return np.linalg.norm(exact - d_phi, axis=1)
