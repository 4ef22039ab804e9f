"""Pareto-front quality metrics.

Conventions: Y_N is the solver's non-dominated objective set, Y_P the
reference front's objective set. Distances are Euclidean in objective
space unless stated otherwise; d_p lives in the concatenated decision
space and feasibility is the lower-level suboptimality gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PURITY_TAU = 0.1


def _as_points(Y, name):
    Y = np.atleast_2d(np.asarray(Y, float))
    if Y.shape[0] == 0:
        raise ValueError(f"{name} must be nonempty")
    return Y


def _min_dists(Y_N, Y_P):
    diff = Y_N[:, None, :] - Y_P[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2)).min(axis=1)


def purity(Y_N, Y_P, tau: float = DEFAULT_PURITY_TAU) -> float:
    """Fraction of Y_N within Euclidean distance tau of some reference point."""
    Y_N = _as_points(Y_N, "Y_N")
    Y_P = _as_points(Y_P, "Y_P")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return float(np.mean(_min_dists(Y_N, Y_P) <= tau))


def gd(Y_N, Y_P) -> float:
    """Generational distance sqrt(sum of squared nearest distances) / |Y_N|."""
    Y_N = _as_points(Y_N, "Y_N")
    Y_P = _as_points(Y_P, "Y_P")
    d = _min_dists(Y_N, Y_P)
    return float(np.sqrt((d * d).sum()) / Y_N.shape[0])


def _objective_gaps(Y_N, Y_P):
    """Per objective: sorted interior gaps plus boundary gaps to the
    reference extremes, floored at zero."""
    out = []
    for j in range(Y_N.shape[1]):
        col = np.sort(Y_N[:, j])
        interior = np.diff(col)
        lo = max(col[0] - Y_P[:, j].min(), 0.0)
        hi = max(Y_P[:, j].max() - col[-1], 0.0)
        out.append((lo, interior, hi))
    return out


def spread_gamma(Y_N, Y_P) -> float:
    """Largest gap (interior or boundary) over all objectives."""
    Y_N = _as_points(Y_N, "Y_N")
    Y_P = _as_points(Y_P, "Y_P")
    if Y_N.shape[0] < 2:
        raise ValueError("spread metrics need at least two points")
    best = 0.0
    for lo, interior, hi in _objective_gaps(Y_N, Y_P):
        best = max(best, lo, hi, float(interior.max()))
    return best


def spread_delta(Y_N, Y_P) -> float:
    """Gap-uniformity spread; 0 means perfectly even coverage of the extremes."""
    Y_N = _as_points(Y_N, "Y_N")
    Y_P = _as_points(Y_P, "Y_P")
    if Y_N.shape[0] < 2:
        raise ValueError("spread metrics need at least two points")
    worst = 0.0
    for lo, interior, hi in _objective_gaps(Y_N, Y_P):
        dbar = float(interior.mean())
        num = lo + hi + float(np.abs(interior - dbar).sum())
        den = lo + hi + interior.size * dbar
        worst = max(worst, num / den if den > 0 else 0.0)
    return worst


def sp(Y_N) -> float:
    """Schott's spacing: spread of nearest-neighbor l1 distances."""
    Y_N = _as_points(Y_N, "Y_N")
    N = Y_N.shape[0]
    if N < 2:
        raise ValueError("sp needs at least two points")
    d1 = np.abs(Y_N[:, None, :] - Y_N[None, :, :]).sum(axis=2)
    np.fill_diagonal(d1, np.inf)
    d1 = d1.min(axis=1)
    dbar = d1.mean()
    return float(np.sqrt(((dbar - d1) ** 2).sum() / (N - 1)))


def dp(inst, front, x) -> float:
    """Normalized decision-space distance of (x, y*(x)) to the front."""
    x = np.asarray(x, float)
    Z = front.decision_points(inst)
    z = np.concatenate([x, inst.lower_solution(x)])
    d2 = (Z * Z).sum(axis=1) - 2.0 * (Z @ z) + z @ z
    return float(np.sqrt(max(d2.min(), 0.0)) / inst.dims.n_x)


def feasibility(inst, x, y) -> float:
    """Lower-level suboptimality f(x, y) - f(x, y*(x)); zero iff y = y*(x)."""
    return inst.eval_lower(x, y) - inst.eval_lower(x, inst.lower_solution(x))


@dataclass
class MetricsReport:
    purity: float
    gd: float
    spread_gamma: float
    spread_delta: float
    sp: float
    dp_mean: float
    feasibility_mean: float
    n_solutions: int
    n_reference: int

    def as_dict(self):
        return {
            "purity": self.purity,
            "gd": self.gd,
            "spread_gamma": self.spread_gamma,
            "spread_delta": self.spread_delta,
            "sp": self.sp,
            "dp_mean": self.dp_mean,
            "feasibility_mean": self.feasibility_mean,
            "n_solutions": self.n_solutions,
            "n_reference": self.n_reference,
        }


def compute_report(Y_N, Y_P, dps, feases, tau: float = DEFAULT_PURITY_TAU) -> MetricsReport:
    """Bundle the front-approximation metrics for one (instance, method) cell.

    Y_N must already be the non-dominated set of final objective vectors;
    ``dps`` and ``feases`` are the per-run values whose means the report
    carries. Metrics needing at least two points degrade to NaN.
    """
    Y_N = _as_points(Y_N, "Y_N")
    Y_P = _as_points(Y_P, "Y_P")
    two = Y_N.shape[0] >= 2
    return MetricsReport(
        purity=purity(Y_N, Y_P, tau),
        gd=gd(Y_N, Y_P),
        spread_gamma=spread_gamma(Y_N, Y_P) if two else float("nan"),
        spread_delta=spread_delta(Y_N, Y_P) if two else float("nan"),
        sp=sp(Y_N) if two else float("nan"),
        dp_mean=float(np.mean(dps)),
        feasibility_mean=float(np.mean(feases)),
        n_solutions=int(Y_N.shape[0]),
        n_reference=int(Y_P.shape[0]),
    )
