"""Reference Pareto fronts for the quadratic family via weighted-sum sweeps.

Because every reduced objective Phi_i is convex quadratic, each weight
vector w on the simplex yields a scalarized problem whose solution is one
Pareto-optimal point, and sweeping a weight grid traces the whole front.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

_RIDGE = 1e-10
_DEDUP_TOL = 1e-12


@dataclass
class ParetoFront:
    weights: np.ndarray     # (N, m)
    decisions: np.ndarray   # (N, n_x)
    objectives: np.ndarray  # (N, m)
    instance_seed: int | None = None
    num_weights: int | None = None
    _decision_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return self.objectives.shape[0]

    def decision_points(self, inst) -> np.ndarray:
        """Concatenated (x*, y*(x*)) rows, cached for distance queries."""
        if self._decision_cache is None:
            X = self.decisions
            Y = -(X @ inst.lower_inverse)
            self._decision_cache = np.hstack([X, Y])
        return self._decision_cache


def scalarized_solution(inst, w):
    """Minimizer and objective vector of sum_i w_i Phi_i for one weight vector.

    Solves (sum_i w_i Q_i + ridge I) x = -sum_i w_i b_i with ridge 1e-10 on
    the reduced quadratic forms. A residual check on the unridged system
    rejects degenerate scalarizations (e.g. all-zero objectives).
    """
    if inst.l1_weights is not None:
        raise ValueError("front sweeps support smooth instances only")
    w = np.asarray(w, float)
    m = inst.dims.m
    if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("w must lie on the unit simplex")
    Q, b = inst.reduced_forms
    Qw = np.tensordot(w, Q, axes=1)
    bw = w @ b
    n = inst.dims.n_x
    x = np.linalg.solve(Qw + _RIDGE * np.eye(n), -bw)
    if np.linalg.norm(Qw @ x + bw) > 1e-6 * max(1.0, np.linalg.norm(bw)):
        raise ValueError("scalarized system is singular; degenerate instance")
    phi = 0.5 * np.einsum("ijk,j,k->i", Q, x, x) + b @ x
    return x, phi


def _weight_grid(m: int, num_weights: int) -> np.ndarray:
    if m == 1:
        return np.array([[1.0]])
    if num_weights < 2:
        raise ValueError("num_weights must be at least 2")
    if m == 2:
        t = np.linspace(0.0, 1.0, num_weights)
        return np.column_stack([t, 1.0 - t])
    # uniform simplex lattice with num_weights points per edge, enumerated
    # by stars and bars so the cost is the lattice size itself
    E = num_weights - 1
    rows = []
    for bars in itertools.combinations(range(E + m - 1), m - 1):
        cuts = (-1, *bars, E + m - 1)
        rows.append([cuts[j + 1] - cuts[j] - 1 for j in range(m)])
    return np.array(rows, float) / E


def sweep_front(inst, num_weights: int | None = None) -> ParetoFront:
    """Sweep a uniform weight grid and keep the non-dominated solutions.

    Defaults: 500 weights for two objectives, 60 per lattice edge for
    three or more.
    """
    m = inst.dims.m
    if num_weights is None:
        num_weights = 500 if m == 2 else 60
    W = _weight_grid(m, num_weights)
    X = np.empty((W.shape[0], inst.dims.n_x))
    PHI = np.empty((W.shape[0], m))
    for j, w in enumerate(W):
        X[j], PHI[j] = scalarized_solution(inst, w)
    keep = nondominated_filter(PHI)
    return ParetoFront(weights=W[keep], decisions=X[keep], objectives=PHI[keep],
                       instance_seed=getattr(inst, "seed", None),
                       num_weights=num_weights)


def nondominated_filter(points, dedup_tol: float = _DEDUP_TOL) -> np.ndarray:
    """Indices of the non-dominated rows, in input order.

    Near-duplicates (l_inf distance <= dedup_tol) collapse to their first
    occurrence. A row is dropped when another kept row is <= in every
    component and != overall.
    """
    P = np.atleast_2d(np.asarray(points, float))
    N = P.shape[0]
    if N == 0:
        return np.array([], dtype=int)
    reps = []
    for i in range(N):
        if not any(np.max(np.abs(P[i] - P[j])) <= dedup_tol for j in reps):
            reps.append(i)
    R = P[reps]
    le = (R[:, None, :] <= R[None, :, :]).all(axis=2)
    lt = (R[:, None, :] < R[None, :, :]).any(axis=2)
    dominated = (le & lt).any(axis=0)
    return np.array([r for r, d in zip(reps, dominated) if not d], dtype=int)


def save_front_csv(front: ParetoFront, path):
    m = front.weights.shape[1]
    n = front.decisions.shape[1]
    header = ([f"w_{j + 1}" for j in range(m)]
              + [f"x_{j + 1}" for j in range(n)]
              + [f"phi_{j + 1}" for j in range(m)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for w, x, phi in zip(front.weights, front.decisions, front.objectives):
            writer.writerow([repr(float(val)) for val in (*w, *x, *phi)])


def load_front_csv(path, instance_seed=None) -> ParetoFront:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, row)) for row in reader]
    m = sum(1 for h in header if h.startswith("w_"))
    n = sum(1 for h in header if h.startswith("x_"))
    data = np.array(rows) if rows else np.empty((0, len(header)))
    return ParetoFront(weights=data[:, :m], decisions=data[:, m:m + n],
                       objectives=data[:, m + n:], instance_seed=instance_seed)
