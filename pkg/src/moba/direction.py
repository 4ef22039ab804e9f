"""Common-descent direction finding for the multi-objective x update.

The x update solves

    min_x  max_i [ <d_i, x - x_k> + g_i(x) - g_i(x_k) ] + ||x - x_k||^2 / (2 alpha)

whose dual is a minimum-norm problem over the simplex. With g = 0 the primal
solution is the explicit step x_k - alpha * sum_i lambda_i d_i where lambda
is the minimum-norm combination; with weighted l1 terms the inner minimum is
a soft-threshold prox and the dual weights are found by projected ascent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_QP_TIE_TOL = 1e-14
_QP_PG_TOL = 1e-12
_QP_PG_MAX_ITERS = 10_000
_L1_DUAL_ITERS = 2_000


@dataclass
class DirectionResult:
    x_next: np.ndarray
    lam: np.ndarray
    subproblem_value: float


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sorting method)."""
    v = np.asarray(v, float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = idx[u - css / idx > 0][-1]
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


def min_norm_simplex(D) -> np.ndarray:
    """Weights of the minimum-norm point in the convex hull of the rows of D.

    m = 1 is trivial and m = 2 has the closed form
    lambda_1 = clip(<d_2 - d_1, d_2> / ||d_1 - d_2||^2, 0, 1), with the
    uniform tie when ||d_1 - d_2|| <= 1e-14. m = 3 enumerates the faces of
    the triangle exactly (see :func:`_min_norm_three`). Larger m runs
    projected gradient on the simplex from the uniform start until the
    gradient mapping norm falls below 1e-12 (or 10,000 iterations).
    """
    D = np.atleast_2d(np.asarray(D, float))
    m = D.shape[0]
    if m == 0:
        raise ValueError("need at least one direction")
    if m == 1:
        return np.array([1.0])
    if m == 2:
        d1, d2 = D
        diff = d1 - d2
        denom = float(diff @ diff)
        if np.sqrt(denom) <= _QP_TIE_TOL:
            return np.array([0.5, 0.5])
        t = float(np.clip(((d2 - d1) @ d2) / denom, 0.0, 1.0))
        return np.array([t, 1.0 - t])
    if m == 3:
        return _min_norm_three(D[None])[0]

    G = D @ D.T
    lmax = float(np.linalg.eigvalsh(G)[-1])
    if lmax <= 0.0:
        # all directions are zero; any weights are optimal
        return np.full(m, 1.0 / m)
    step = 1.0 / (2.0 * lmax)
    lam = np.full(m, 1.0 / m)
    for _ in range(_QP_PG_MAX_ITERS):
        nxt = project_simplex(lam - step * 2.0 * (G @ lam))
        moved = np.linalg.norm(lam - nxt) / step
        lam = nxt
        if moved <= _QP_PG_TOL:
            break
    return lam


_TRI_DEGENERATE = 1e-12


def _min_norm_three(D: np.ndarray) -> np.ndarray:
    """Exact minimum-norm weights over a (B, 3, n) stack of direction triples.

    The minimum-norm point of a triangle's convex hull lies in the relative
    interior of exactly one face, so checking all seven faces is
    exhaustive: three vertices, three edges via the two-point closed form,
    and the full triangle via the 2x2 normal equations in the edge
    difference vectors. A triangle whose difference vectors are parallel
    (relative determinant below 1e-12) is a segment that its edges already
    cover, so the interior candidate is skipped there.
    """
    d0, d1, d2 = D[:, 0], D[:, 1], D[:, 2]
    B = D.shape[0]
    vals = np.empty((B, 7))
    lams = np.zeros((B, 7, 3))

    def dot(a, b):
        return np.einsum("ij,ij->i", a, b)

    for c, d in enumerate((d0, d1, d2)):
        vals[:, c] = dot(d, d)
        lams[:, c, c] = 1.0

    # edges, index i holding weight t: same arithmetic as the m = 2 path
    for c, (i, j, di, dj) in enumerate(((0, 1, d0, d1), (0, 2, d0, d2),
                                        (1, 2, d1, d2)), start=3):
        diff = di - dj
        den = dot(diff, diff)
        tie = np.sqrt(den) <= _QP_TIE_TOL
        t = np.clip(dot(dj - di, dj) / np.where(tie, 1.0, den), 0.0, 1.0)
        t = np.where(tie, 0.5, t)
        p = t[:, None] * di + (1.0 - t)[:, None] * dj
        vals[:, c] = dot(p, p)
        lams[:, c, i] = t
        lams[:, c, j] = 1.0 - t

    # interior: minimize ||d2 + t0 (d0 - d2) + t1 (d1 - d2)||^2 over t
    u = d0 - d2
    w = d1 - d2
    m00, m11, m01 = dot(u, u), dot(w, w), dot(u, w)
    det = m00 * m11 - m01 * m01
    ok = det > _TRI_DEGENERATE * m00 * m11
    safe = np.where(ok, det, 1.0)
    t0 = (-dot(u, d2) * m11 + dot(w, d2) * m01) / safe
    t1 = (-dot(w, d2) * m00 + dot(u, d2) * m01) / safe
    lam_full = np.stack([t0, t1, 1.0 - t0 - t1], axis=1)
    feas = ok & (lam_full.min(axis=1) >= -1e-12)
    lam_full = np.maximum(lam_full, 0.0)
    lam_full /= lam_full.sum(axis=1, keepdims=True) + (~feas)[:, None]
    p = np.einsum("bi,bin->bn", lam_full, D)
    vals[:, 6] = np.where(feas, dot(p, p), np.inf)
    lams[:, 6] = lam_full

    return lams[np.arange(B), np.argmin(vals, axis=1)]


def stationarity_residual(D) -> float:
    """Norm of the minimum-norm convex combination of the rows of D."""
    D = np.atleast_2d(np.asarray(D, float))
    lam = min_norm_simplex(D)
    return float(np.linalg.norm(lam @ D))


def project_simplex_rows(V: np.ndarray) -> np.ndarray:
    """Row-wise simplex projection; same arithmetic as project_simplex."""
    V = np.asarray(V, float)
    u = -np.sort(-V, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, V.shape[1] + 1)
    cond = u - css / idx > 0
    rho = V.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(V.shape[0]), rho] / (rho + 1)
    return np.maximum(V - tau[:, None], 0.0)


def min_norm_simplex_batch(D: np.ndarray) -> np.ndarray:
    """min_norm_simplex applied to a (B, m, n) stack, one row set per run.

    Vectorizes the m = 2 closed form and the m = 3 face enumeration
    directly; for larger m every row runs the same projected-gradient
    recursion as the scalar path, frozen individually once its own gradient
    mapping passes the tolerance, so the batch reproduces the per-problem
    iteration sequences.
    """
    D = np.asarray(D, float)
    B, m, _ = D.shape
    if m == 1:
        return np.ones((B, 1))
    if m == 2:
        d1, d2 = D[:, 0, :], D[:, 1, :]
        diff = d1 - d2
        denom = (diff * diff).sum(axis=1)
        tie = np.sqrt(denom) <= _QP_TIE_TOL
        t = np.clip(((d2 - d1) * d2).sum(axis=1) / np.where(tie, 1.0, denom), 0.0, 1.0)
        t = np.where(tie, 0.5, t)
        return np.stack([t, 1.0 - t], axis=1)
    if m == 3:
        return _min_norm_three(D)

    G = np.einsum("bik,bjk->bij", D, D)
    lmax = np.linalg.eigvalsh(G)[:, -1]
    flat = lmax <= 0.0
    step = 1.0 / (2.0 * np.where(flat, 1.0, lmax))
    lam = np.full((B, m), 1.0 / m)
    live = ~flat
    for _ in range(_QP_PG_MAX_ITERS):
        if not live.any():
            break
        rows = np.flatnonzero(live)
        grad = 2.0 * np.einsum("bij,bj->bi", G[rows], lam[rows])
        nxt = project_simplex_rows(lam[rows] - step[rows, None] * grad)
        moved = np.linalg.norm(lam[rows] - nxt, axis=1) / step[rows]
        lam[rows] = nxt
        live[rows] = moved > _QP_PG_TOL
    return lam


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def solve_x_subproblem(x_k, D, alpha: float, l1_weights=None,
                       domain: str = "rn") -> DirectionResult:
    """One proximal multi-objective x update around x_k.

    ``D`` stacks the m direction vectors (hypergradient estimates),
    ``l1_weights`` optionally gives coefficients c_i of g_i = c_i ||x||_1,
    and only the unconstrained domain is supported.
    """
    if domain != "rn":
        raise ValueError(f"unsupported constraint set {domain!r}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x_k = np.asarray(x_k, float)
    D = np.atleast_2d(np.asarray(D, float))
    m, n = D.shape
    if x_k.shape != (n,):
        raise ValueError(f"x_k has shape {x_k.shape}, directions have length {n}")

    if l1_weights is None:
        lam = min_norm_simplex(D)
        x_next = x_k - alpha * (lam @ D)
        step = x_next - x_k
        value = float(np.max(D @ step) + step @ step / (2.0 * alpha))
        return DirectionResult(x_next=x_next, lam=lam, subproblem_value=value)

    c = np.asarray(l1_weights, float)
    if c.shape != (m,) or np.any(c < 0):
        raise ValueError("l1_weights must be one nonnegative coefficient per objective")

    x1_k = np.abs(x_k).sum()

    def primal_point(lam):
        return _soft_threshold(x_k - alpha * (lam @ D), alpha * (lam @ c))

    def gaps(x):
        # per-objective values h_i(x) entering the max
        return D @ (x - x_k) + c * (np.abs(x).sum() - x1_k)

    if m == 1:
        lam = np.array([1.0])
        x_next = primal_point(lam)
    else:
        # projected (super)gradient ascent on the concave dual, averaging the
        # trailing half of the iterates before recovering the primal point
        scale = max(float(np.max(np.linalg.norm(D, axis=1) + c * np.sqrt(n))), 1e-12)
        step = 1.0 / (alpha * m * scale * scale)
        lam = np.full(m, 1.0 / m)
        acc = np.zeros(m)
        tail = 0
        for t in range(_L1_DUAL_ITERS):
            u = gaps(primal_point(lam))
            lam = project_simplex(lam + step * u)
            if t >= _L1_DUAL_ITERS // 2:
                acc += lam
                tail += 1
        lam = acc / tail
        x_next = primal_point(lam)

    step_vec = x_next - x_k
    value = float(np.max(gaps(x_next)) + step_vec @ step_vec / (2.0 * alpha))
    return DirectionResult(x_next=x_next, lam=lam, subproblem_value=value)
