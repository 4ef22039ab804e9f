"""Problem interface and the random strongly convex quadratic test family.

The problems solved here have the form

    min_x  ( F_1(x, y) + g_1(x), ..., F_m(x, y) + g_m(x) )
    s.t.   y in argmin_y f(x, y)

with f strongly convex in y, so the lower-level solution y*(x) is unique and
the reduced objectives Phi_i(x) = F_i(x, y*(x)) + g_i(x) are well defined.
Solvers talk to a problem only through the oracle methods on
:class:`MobloProblem`; the quadratic family adds exact oracles (lower-level
solution, adjoint solutions, hypergradients) used for test fronts and
diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve


@dataclass(frozen=True)
class ProblemDims:
    """Upper dimension n_x, lower dimension n_y, number of objectives m."""

    n_x: int
    n_y: int
    m: int

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1 or self.m < 1:
            raise ValueError(f"dimensions must be positive integers, got {self}")


class MobloProblem:
    """Oracle interface consumed by the solvers.

    Subclasses must provide the single-objective methods; the batched
    variants have generic fallbacks and exist so that structured problems
    can answer all objectives with one matrix product.

    ``l1_weights`` describes the only supported nonsmooth term: g_i(x) =
    l1_weights[i] * ||x||_1, with None meaning g = 0.
    """

    dims: ProblemDims
    l1_weights = None

    # single-objective oracles -------------------------------------------

    def eval_upper(self, i: int, x, y) -> float:
        raise NotImplementedError

    def grad_upper_x(self, i: int, x, y):
        raise NotImplementedError

    def grad_upper_y(self, i: int, x, y):
        raise NotImplementedError

    def eval_lower(self, x, y) -> float:
        raise NotImplementedError

    def grad_lower_y(self, x, y):
        raise NotImplementedError

    def hess_yy_vec(self, x, y, v):
        """Product of the lower-level Hessian in y with v."""
        raise NotImplementedError

    def cross_xy_vec(self, x, y, v):
        """Product of the mixed second derivative of f (x rows, y columns) with v."""
        raise NotImplementedError

    # batched fallbacks ---------------------------------------------------

    def upper_eval(self, x, y):
        """Values and both gradient blocks of every objective at (x, y)."""
        m = self.dims.m
        F = np.array([self.eval_upper(i, x, y) for i in range(m)])
        Gx = np.stack([self.grad_upper_x(i, x, y) for i in range(m)])
        Gy = np.stack([self.grad_upper_y(i, x, y) for i in range(m)])
        return F, Gx, Gy

    def hess_yy_mat(self, x, y, V):
        return np.stack([self.hess_yy_vec(x, y, v) for v in V])

    def cross_xy_mat(self, x, y, V):
        return np.stack([self.cross_xy_vec(x, y, v) for v in V])


def _random_psd(rng: np.random.Generator, k: int) -> np.ndarray:
    """Symmetric PSD matrix with eigenvalues drawn uniformly from [0, 1].

    The orthogonal factor is Haar distributed: QR of a Gaussian matrix with
    the sign of R's diagonal folded into Q.
    """
    g = rng.standard_normal((k, k))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    lam = rng.uniform(0.0, 1.0, size=k)
    s = (q * lam) @ q.T
    return (s + s.T) / 2.0


@dataclass(frozen=True)
class QuadraticInstance(MobloProblem):
    """Randomly generated quadratic instance with exact analytic oracles.

    Upper level:  F_i(x, y) = 0.5 z' A_i z + a_i' z  with  z = [x; y],
                  A_i symmetric PSD with spectrum in [0, 1].
    Lower level:  f(x, y) = 0.5 y' (B'B) y + x' y + 0.5 mu ||y||^2,
    so the lower-level Hessian H = B'B + mu I is constant and the mixed
    block is the identity, giving y*(x) = -H^{-1} x in closed form.
    """

    dims: ProblemDims
    A: np.ndarray  # (m, n_x+n_y, n_x+n_y)
    a: np.ndarray  # (m, n_x+n_y)
    B: np.ndarray  # (n_y, n_y)
    mu: float
    seed: int
    l1_weights: np.ndarray | None = None

    def __post_init__(self):
        d = self.dims.n_x + self.dims.n_y
        if self.A.shape != (self.dims.m, d, d):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.dims.m, d, d)}")
        if self.a.shape != (self.dims.m, d):
            raise ValueError(f"a has shape {self.a.shape}, expected {(self.dims.m, d)}")
        if self.B.shape != (self.dims.n_y, self.dims.n_y):
            raise ValueError(f"B has shape {self.B.shape}")
        if self.mu <= 0:
            raise ValueError("mu must be positive for a strongly convex lower level")
        if self.dims.n_x != self.dims.n_y:
            raise ValueError("the quadratic family couples x and y one-to-one (n_x == n_y)")
        if self.l1_weights is not None:
            w = np.asarray(self.l1_weights, float)
            if w.shape != (self.dims.m,) or np.any(w < 0):
                raise ValueError("l1_weights must be m nonnegative reals")

    # cached linear algebra ------------------------------------------------

    @cached_property
    def hess_lower(self) -> np.ndarray:
        """Constant lower-level Hessian H = B'B + mu I."""
        return self.B.T @ self.B + self.mu * np.eye(self.dims.n_y)

    @cached_property
    def _chol(self):
        return cho_factor(self.hess_lower, lower=True)

    @cached_property
    def _A_flat(self) -> np.ndarray:
        m, d, _ = self.A.shape
        return np.ascontiguousarray(self.A.reshape(m * d, d))

    @cached_property
    def lower_inverse(self) -> np.ndarray:
        """H^{-1}, materialized once for front sweeps and distance checks."""
        return cho_solve(self._chol, np.eye(self.dims.n_y))

    @cached_property
    def reduced_forms(self):
        """(Q, b) with Phi_i(x) = 0.5 x'Q_i x + b_i'x on the smooth part.

        Substituting y*(x) = -H^{-1} x means z = P x with P = [I; -H^{-1}],
        so Q_i = P'A_iP and b_i = P'a_i.
        """
        n = self.dims.n_x
        P = np.vstack([np.eye(n), -self.lower_inverse])
        Q = np.einsum("ji,mjk,kl->mil", P, self.A, P)
        Q = (Q + np.transpose(Q, (0, 2, 1))) / 2.0
        b = self.a @ P
        return Q, b

    # upper-level oracles ---------------------------------------------------

    def _check_index(self, i: int):
        if not 0 <= i < self.dims.m:
            raise IndexError(f"objective index {i} out of range for m={self.dims.m}")

    def _z(self, x, y):
        return np.concatenate([np.asarray(x, float), np.asarray(y, float)])

    def eval_upper(self, i, x, y):
        self._check_index(i)
        z = self._z(x, y)
        return float(0.5 * z @ (self.A[i] @ z) + self.a[i] @ z)

    def grad_upper_x(self, i, x, y):
        self._check_index(i)
        z = self._z(x, y)
        return (self.A[i] @ z + self.a[i])[: self.dims.n_x]

    def grad_upper_y(self, i, x, y):
        self._check_index(i)
        z = self._z(x, y)
        return (self.A[i] @ z + self.a[i])[self.dims.n_x :]

    def upper_eval(self, x, y):
        z = self._z(x, y)
        m, d = self.a.shape
        W = (self._A_flat @ z).reshape(m, d) + self.a
        F = 0.5 * (W @ z) + 0.5 * (self.a @ z)
        n = self.dims.n_x
        return F, W[:, :n], W[:, n:]

    # lower-level oracles ---------------------------------------------------

    def eval_lower(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        by = self.B @ y
        return float(0.5 * by @ by + x @ y + 0.5 * self.mu * y @ y)

    def grad_lower_y(self, x, y):
        return self.hess_lower @ np.asarray(y, float) + np.asarray(x, float)

    def hess_yy_vec(self, x, y, v):
        return self.hess_lower @ np.asarray(v, float)

    def cross_xy_vec(self, x, y, v):
        # the coupling term x'y makes the mixed block the identity
        return np.asarray(v, float)

    def hess_yy_mat(self, x, y, V):
        return np.asarray(V, float) @ self.hess_lower

    def cross_xy_mat(self, x, y, V):
        return np.asarray(V, float)

    # exact oracles ----------------------------------------------------------

    def lower_solution(self, x):
        """y*(x), the unique lower-level minimizer."""
        return cho_solve(self._chol, -np.asarray(x, float))

    def lower_solution_many(self, X):
        """Row-wise y*(x) for a stack of upper points, one solve."""
        return cho_solve(self._chol, -np.asarray(X, float).T).T

    def exact_v_star(self, i, x):
        """Adjoint solution v_i*(x) of H v = grad_y F_i(x, y*(x))."""
        self._check_index(i)
        ys = self.lower_solution(x)
        return cho_solve(self._chol, self.grad_upper_y(i, x, ys))

    def exact_v_star_all(self, x):
        ys = self.lower_solution(x)
        _, _, Gy = self.upper_eval(x, ys)
        return cho_solve(self._chol, Gy.T).T

    def exact_hypergradient(self, i, x):
        """Gradient of the smooth reduced objective F_i(x, y*(x))."""
        self._check_index(i)
        ys = self.lower_solution(x)
        return self.grad_upper_x(i, x, ys) - self.cross_xy_vec(x, ys, self.exact_v_star(i, x))

    def exact_hypergradients(self, x):
        ys = self.lower_solution(x)
        _, Gx, Gy = self.upper_eval(x, ys)
        V = cho_solve(self._chol, Gy.T).T
        return Gx - self.cross_xy_mat(x, ys, V)

    def reduced_objectives(self, x):
        """Phi_i(x) = F_i(x, y*(x)) + g_i(x) for all i."""
        x = np.asarray(x, float)
        ys = self.lower_solution(x)
        F, _, _ = self.upper_eval(x, ys)
        if self.l1_weights is not None:
            F = F + np.asarray(self.l1_weights, float) * np.abs(x).sum()
        return F

    # serialization ------------------------------------------------------------

    def save(self, path):
        payload = dict(
            n_x=self.dims.n_x,
            n_y=self.dims.n_y,
            m=self.dims.m,
            A=self.A,
            a=self.a,
            B=self.B,
            mu=self.mu,
            seed=self.seed,
            rng=np.array("numpy-PCG64"),
        )
        if self.l1_weights is not None:
            payload["l1_weights"] = np.asarray(self.l1_weights, float)
        np.savez(path, **payload)


def load_instance(path) -> QuadraticInstance:
    with np.load(path, allow_pickle=False) as z:
        dims = ProblemDims(int(z["n_x"]), int(z["n_y"]), int(z["m"]))
        l1 = z["l1_weights"] if "l1_weights" in z.files else None
        return QuadraticInstance(
            dims=dims,
            A=z["A"],
            a=z["a"],
            B=z["B"],
            mu=float(z["mu"]),
            seed=int(z["seed"]),
            l1_weights=l1,
        )


def generate_instance(dims: ProblemDims, mu: float, seed: int,
                      l1_weights=None) -> QuadraticInstance:
    """Draw a quadratic instance from the named PCG64 stream for ``seed``.

    Deterministic: the same (dims, mu, seed) always produces bitwise
    identical matrices. Each A_i and B is built as Q diag(lam) Q' with Q
    Haar orthogonal and lam uniform on [0, 1]; each a_i is entrywise
    uniform on [-1, 1].
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if dims.n_x != dims.n_y:
        raise ValueError("the quadratic family requires n_x == n_y")
    rng = np.random.default_rng(seed)
    d = dims.n_x + dims.n_y
    A = np.stack([_random_psd(rng, d) for _ in range(dims.m)])
    a = rng.uniform(-1.0, 1.0, size=(dims.m, d))
    B = _random_psd(rng, dims.n_y)
    return QuadraticInstance(dims=dims, A=A, a=a, B=B, mu=float(mu),
                             seed=int(seed), l1_weights=l1_weights)


@dataclass(frozen=True)
class ProblemConstants:
    mu: float
    L_fy: float
    L_fyy: float
    L_fxy: float


@dataclass(frozen=True)
class StepBounds:
    beta_max: float
    eta_max: float


def compute_constants(inst: QuadraticInstance) -> ProblemConstants:
    """Smoothness and strong-convexity constants of the lower level.

    The Hessian blocks are constant here, so the second-order Lipschitz
    constants are exactly zero and L_fy is the largest eigenvalue of H.
    """
    L_fy = float(np.linalg.eigvalsh(inst.hess_lower)[-1])
    return ProblemConstants(mu=float(inst.mu), L_fy=L_fy, L_fyy=0.0, L_fxy=0.0)


def recommend_steps(constants: ProblemConstants) -> StepBounds:
    """Largest inner step sizes with guaranteed per-step error contraction.

    beta_max = 2 / (mu + L_fy) keeps the y iteration a (1 - mu*beta)
    contraction in squared error; eta_max = 1 / L_fy does the same for the
    adjoint iteration with factor (1 - eta*mu).
    """
    return StepBounds(
        beta_max=2.0 / (constants.mu + constants.L_fy),
        eta_max=1.0 / constants.L_fy,
    )
