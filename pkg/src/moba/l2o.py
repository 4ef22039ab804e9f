"""Learned unrolled variant of the single-loop solver.

The forward pass stacks K parameterized layers. Layer k owns an
unconstrained weight vector lt[k] (softmaxed into simplex weights) and a
step multiplier gamma[k]:

    y^{k+1}   = y^k - gamma_k * beta * grad_y f(x^k, y^k)
    v_i^{k+1} = v_i^k - gamma_k * eta * (hess_yy f v_i^k - grad_y F_i)
    x^{k+1}   = x^k - gamma_k * alpha * sum_i lambda_i^k (grad_x F_i - cross_xy f v_i^k)

Parameters are stored for K+1 layers to keep one weight set per unrolled
state; the final set is inert in the forward pass and its gradients are
exactly zero. Training minimizes a terminal loss over random preference
vectors and starts, by Adam on gradients from either central finite
differences (any problem) or a hand-derived reverse-mode pass (quadratic
instances).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .gmoba import RunRecord, SolverConfig, solve
from .problem import QuadraticInstance

LOSS_IDS = ("L1", "L2", "L3", "L4")
_FD_STEP = 1e-5
_ADAM_B1, _ADAM_B2, _ADAM_EPS = 0.9, 0.999, 1e-8


def softmax(v) -> np.ndarray:
    """Numerically stable softmax (max subtraction)."""
    v = np.asarray(v, float)
    e = np.exp(v - v.max())
    return e / e.sum()


@dataclass
class L2OParams:
    lambda_raw: np.ndarray  # (K+1, m)
    gamma: np.ndarray       # (K+1,)

    def __post_init__(self):
        self.lambda_raw = np.atleast_2d(np.asarray(self.lambda_raw, float))
        self.gamma = np.asarray(self.gamma, float)
        if self.gamma.shape != (self.lambda_raw.shape[0],):
            raise ValueError("lambda_raw and gamma must have one row per layer")

    @property
    def K(self) -> int:
        return self.lambda_raw.shape[0] - 1

    @property
    def m(self) -> int:
        return self.lambda_raw.shape[1]

    def copy(self) -> "L2OParams":
        return L2OParams(self.lambda_raw.copy(), self.gamma.copy())


def init_params(K: int, m: int, random_init: bool = False, rng=None) -> L2OParams:
    """Identity-like start: uniform weights, unit step multipliers."""
    if K < 0 or m < 1:
        raise ValueError("need K >= 0 and m >= 1")
    if random_init:
        rng = np.random.default_rng() if rng is None else rng
        return L2OParams(0.1 * rng.standard_normal((K + 1, m)),
                         1.0 + 0.1 * rng.standard_normal(K + 1))
    return L2OParams(np.zeros((K + 1, m)), np.ones(K + 1))


@dataclass
class TrainConfig:
    layers: int = 100
    train_iters: int = 2000
    learn_rate: float = 0.01
    loss_id: str = "L1"
    seed: int = 0
    alpha: float = 0.0025
    beta: float = 1.0
    eta: float = 0.1
    random_init: bool = False
    gaussian_start: bool = False  # also draw y0, v0 for training samples
    grad_mode: str = "auto"       # auto | adjoint | fd

    def __post_init__(self):
        if self.loss_id not in LOSS_IDS:
            raise ValueError(f"loss_id must be one of {LOSS_IDS}")
        if self.grad_mode not in ("auto", "adjoint", "fd"):
            raise ValueError("grad_mode must be auto, adjoint, or fd")
        if self.layers < 0 or self.train_iters < 0:
            raise ValueError("layers and train_iters must be nonnegative")
        if min(self.alpha, self.beta, self.eta, self.learn_rate) <= 0:
            raise ValueError("step sizes must be positive")


@dataclass
class TrainResult:
    params: L2OParams
    diverged: bool
    loss_history: list
    time_s: float


def _start_arrays(inst, x0, y0, v0):
    dims = inst.dims
    x = np.asarray(x0, float)
    y = np.zeros(dims.n_y) if y0 is None else np.asarray(y0, float)
    v = np.zeros((dims.m, dims.n_y)) if v0 is None else np.asarray(v0, float)
    if x.shape != (dims.n_x,) or y.shape != (dims.n_y,) or v.shape != (dims.m, dims.n_y):
        raise ValueError("start point shapes do not match the problem dimensions")
    return x, y, v


def l2o_forward(inst, params: L2OParams, x0, y0=None, v0=None,
                alpha: float = 0.0025, beta: float = 1.0, eta: float = 0.1):
    """Apply the K unrolled layers; returns (x_K, y_K, v_K)."""
    x, y, v = _start_arrays(inst, x0, y0, v0)
    for k in range(params.K):
        lam = softmax(params.lambda_raw[k])
        g = params.gamma[k]
        _, Gx, Gy = inst.upper_eval(x, y)
        d_phi = Gx - inst.cross_xy_mat(x, y, v)
        d_v = inst.hess_yy_mat(x, y, v) - Gy
        gyf = inst.grad_lower_y(x, y)
        x, y, v = (x - g * alpha * (lam @ d_phi),
                   y - g * beta * gyf,
                   v - g * eta * d_v)
    return x, y, v


def _terminal_loss(inst, x, y, p, loss_id):
    F, Gx, Gy = inst.upper_eval(x, y)
    if loss_id == "L1":
        val = float(p @ F)
        xb, yb = p @ Gx, p @ Gy
    elif loss_id == "L3":
        i = int(np.argmax(F))
        val = float(F[i])
        xb, yb = Gx[i].copy(), Gy[i].copy()
    else:
        base_val, xb, yb = _terminal_loss(inst, x, y, p, "L1" if loss_id == "L2" else "L3")
        val = base_val + inst.eval_lower(x, y)
        xb = xb + np.asarray(y, float)  # grad_x f for the bilinear coupling
        yb = yb + inst.grad_lower_y(x, y)
    return val, xb, yb


def loss(inst, params: L2OParams, x0, p, loss_id: str = "L1", y0=None, v0=None,
         alpha: float = 0.0025, beta: float = 1.0, eta: float = 0.1) -> float:
    """Terminal training loss for one preference vector p.

    L1 = sum_i p_i F_i, L2 = L1 + f, L3 = max_i F_i, L4 = L3 + f, all at
    the unrolled output (x_K, y_K).
    """
    if loss_id not in LOSS_IDS:
        raise ValueError(f"loss_id must be one of {LOSS_IDS}")
    p = np.asarray(p, float)
    if p.shape != (inst.dims.m,):
        raise ValueError("p must have one entry per objective")
    x, y, _ = l2o_forward(inst, params, x0, y0, v0, alpha, beta, eta)
    val, _, _ = _terminal_loss(inst, x, y, p, loss_id)
    return val


def _fd_loss_grad(inst, params, x0, p, loss_id, y0, v0, alpha, beta, eta):
    def value(pp):
        return loss(inst, pp, x0, p, loss_id, y0, v0, alpha, beta, eta)

    base = value(params)
    gl = np.zeros_like(params.lambda_raw)
    gg = np.zeros_like(params.gamma)
    for arr, grad in ((params.lambda_raw, gl), (params.gamma, gg)):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + _FD_STEP
            hi = value(params)
            arr[idx] = orig - _FD_STEP
            lo = value(params)
            arr[idx] = orig
            grad[idx] = (hi - lo) / (2.0 * _FD_STEP)
    return base, gl, gg


def _adjoint_loss_grad(inst, params, x0, p, loss_id, y0, v0, alpha, beta, eta):
    """Reverse-mode gradient through the unrolled layers (quadratic instances).

    The layer maps are linear-quadratic with constant Hessian blocks, so
    the backward pass only needs the per-layer weights and the cached
    update directions, not the states themselves.
    """
    if not isinstance(inst, QuadraticInstance):
        raise TypeError("the adjoint path needs a quadratic instance")
    n = inst.dims.n_x
    Axx = np.ascontiguousarray(inst.A[:, :n, :n])
    Axy = np.ascontiguousarray(inst.A[:, :n, n:])
    Ayy = np.ascontiguousarray(inst.A[:, n:, n:])
    H = inst.hess_lower

    x, y, v = _start_arrays(inst, x0, y0, v0)
    K = params.K
    tape = []
    for k in range(K):
        lam = softmax(params.lambda_raw[k])
        g = params.gamma[k]
        _, Gx, Gy = inst.upper_eval(x, y)
        d_phi = Gx - v
        d_v = v @ H - Gy
        gyf = H @ y + x
        mix = lam @ d_phi
        tape.append((lam, g, d_phi, d_v, gyf, mix))
        x, y, v = x - g * alpha * mix, y - g * beta * gyf, v - g * eta * d_v

    p = np.asarray(p, float)
    val, xb, yb = _terminal_loss(inst, x, y, p, loss_id)
    vb = np.zeros_like(v)
    gl = np.zeros_like(params.lambda_raw)
    gg = np.zeros_like(params.gamma)
    for k in range(K - 1, -1, -1):
        lam, g, d_phi, d_v, gyf, mix = tape[k]
        cx, cy, cv = g * alpha, g * beta, g * eta
        gg[k] = (-alpha * (xb @ mix) - beta * (yb @ gyf)
                 - eta * float((vb * d_v).sum()))
        u = -cx * (d_phi @ xb)
        gl[k] = lam * (u - float(lam @ u))
        xb_new = (xb
                  - cx * np.einsum("i,ijk,k->j", lam, Axx, xb)
                  - cy * yb
                  + cv * np.einsum("ijk,ik->j", Axy, vb))
        yb_new = ((yb - cy * (H @ yb))
                  - cx * np.einsum("i,ikj,k->j", lam, Axy, xb)
                  + cv * np.einsum("ijk,ik->j", Ayy, vb))
        vb = cx * np.outer(lam, xb) + (vb - cv * (vb @ H))
        xb, yb = xb_new, yb_new
    return val, gl, gg


def loss_gradient(inst, params: L2OParams, x0, p, loss_id: str = "L1",
                  y0=None, v0=None, alpha: float = 0.0025, beta: float = 1.0,
                  eta: float = 0.1, mode: str = "auto"):
    """Gradients of the training loss w.r.t. (lambda_raw, gamma).

    ``mode``: "fd" for central finite differences (step 1e-5), "adjoint"
    for the reverse-mode pass, "auto" to pick the adjoint whenever the
    instance supports it. The two paths are mutual oracles in the tests.
    """
    if loss_id not in LOSS_IDS:
        raise ValueError(f"loss_id must be one of {LOSS_IDS}")
    if mode == "auto":
        mode = "adjoint" if isinstance(inst, QuadraticInstance) else "fd"
    if mode == "adjoint":
        _, gl, gg = _adjoint_loss_grad(inst, params, x0, p, loss_id, y0, v0, alpha, beta, eta)
    elif mode == "fd":
        _, gl, gg = _fd_loss_grad(inst, params, x0, p, loss_id, y0, v0, alpha, beta, eta)
    else:
        raise ValueError("mode must be auto, adjoint, or fd")
    return gl, gg


def train(inst, config: TrainConfig) -> TrainResult:
    """Adam training over random preferences p ~ Dirichlet(1) and normal starts.

    Deterministic for a fixed seed. A non-finite loss or gradient aborts
    immediately and returns the last finite parameters with the diverged
    flag set.
    """
    dims = inst.dims
    rng = np.random.default_rng(config.seed)
    params = init_params(config.layers, dims.m, config.random_init, rng)
    use_adjoint = config.grad_mode == "adjoint" or (
        config.grad_mode == "auto" and isinstance(inst, QuadraticInstance))
    grad_fn = _adjoint_loss_grad if use_adjoint else _fd_loss_grad

    flat = np.concatenate([params.lambda_raw.ravel(), params.gamma])
    m1 = np.zeros_like(flat)
    m2 = np.zeros_like(flat)
    split = params.lambda_raw.size
    history = []
    diverged = False
    t0 = time.perf_counter()
    for t in range(1, config.train_iters + 1):
        draws = rng.standard_gamma(1.0, size=dims.m)
        p = draws / draws.sum()
        x0 = rng.standard_normal(dims.n_x)
        y0 = rng.standard_normal(dims.n_y) if config.gaussian_start else None
        v0 = rng.standard_normal((dims.m, dims.n_y)) if config.gaussian_start else None
        val, gl, gg = grad_fn(inst, params, x0, p, config.loss_id, y0, v0,
                              config.alpha, config.beta, config.eta)
        g = np.concatenate([gl.ravel(), gg])
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            diverged = True
            break
        history.append(float(val))
        m1 = _ADAM_B1 * m1 + (1 - _ADAM_B1) * g
        m2 = _ADAM_B2 * m2 + (1 - _ADAM_B2) * g * g
        mhat = m1 / (1 - _ADAM_B1 ** t)
        vhat = m2 / (1 - _ADAM_B2 ** t)
        flat = flat - config.learn_rate * mhat / (np.sqrt(vhat) + _ADAM_EPS)
        params = L2OParams(flat[:split].reshape(params.lambda_raw.shape).copy(),
                           flat[split:].copy())
    return TrainResult(params=params, diverged=diverged, loss_history=history,
                       time_s=time.perf_counter() - t0)


def make_validation_batch(inst, count: int, seed: int):
    """Fixed held-out (x0, p) pairs for comparing parameter sets."""
    rng = np.random.default_rng(seed)
    batch = []
    for _ in range(count):
        draws = rng.standard_gamma(1.0, size=inst.dims.m)
        batch.append((rng.standard_normal(inst.dims.n_x), draws / draws.sum()))
    return batch


def validation_loss(inst, params: L2OParams, batch, loss_id: str = "L1",
                    alpha: float = 0.0025, beta: float = 1.0, eta: float = 0.1) -> float:
    vals = [loss(inst, params, x0, p, loss_id, alpha=alpha, beta=beta, eta=eta)
            for x0, p in batch]
    return float(np.mean(vals))


def l2o_then_gmoba(inst, params: L2OParams, x0, config: SolverConfig | None = None,
                   front=None, y0=None, v0=None) -> RunRecord:
    """Unrolled warm start followed by the plain solver; preamble cost is tagged."""
    cfg = config if config is not None else SolverConfig()
    t0 = time.perf_counter()
    x, y, v = l2o_forward(inst, params, x0, y0, v0, cfg.alpha, cfg.beta, cfg.eta)
    t_pre = time.perf_counter() - t0
    record = solve(inst, x, y, v, cfg, front)
    record.preamble_iters = params.K
    record.preamble_time_s = t_pre
    return record


def save_params(params: L2OParams, path, config: TrainConfig | None = None,
                seed: int | None = None):
    """Checkpoint with layer count, objective count, and full-precision weights."""
    meta = {}
    if config is not None:
        meta = {k: getattr(config, k) for k in config.__dataclass_fields__}
    np.savez(path, lambda_raw=params.lambda_raw, gamma=params.gamma,
             K=params.K, m=params.m,
             seed=-1 if seed is None else int(seed),
             config_json=np.array(json.dumps(meta)))


def load_params(path):
    with np.load(path, allow_pickle=False) as z:
        params = L2OParams(z["lambda_raw"], z["gamma"])
        meta = json.loads(str(z["config_json"]))
        seed = int(z["seed"])
    return params, meta, (None if seed == -1 else seed)
