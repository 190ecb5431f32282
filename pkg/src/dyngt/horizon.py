"""Finite-horizon first-stage group sizes for the i.i.d. dynamic model.

Each day every never-infected person is infected independently with
probability ``p``. People leave the first-stage pipeline for a day when their
pool is contaminated (they are individually tested next day) and return the
day after if the individual test is negative. The expected pipeline obeys

    E[N_d] = E[N_{d-1}] * keep(s_{d-1}) + E[N_{d-2}] * back(s_{d-2})

with ``keep(s) = (1-p)^s`` and ``back(s) = (1 - (1-p)^s - p) * (1-p)``, and the
expected number of tests is ``sum_d E[N_d] * cost(s_d)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .objectives import cost_curve, dorfman_cost_per_person, optimal_group_size

BRUTE_FORCE_MAX_T = 5
BRUTE_FORCE_MAX_S = 40
_TIE_RTOL = 1e-12


@dataclass
class HorizonPlan:
    p: float
    group_sizes: np.ndarray
    expected_pipeline: np.ndarray
    expected_total_tests: float
    expected_daily_tests: np.ndarray = field(repr=False)

    @property
    def horizon(self) -> int:
        return len(self.group_sizes)

    def rows(self) -> list[dict]:
        return [
            {
                "d": d + 1,
                "s_d": float(s) if not float(s).is_integer() else int(s),
                "expected_pipeline": float(n),
                "expected_tests": float(c),
            }
            for d, (s, n, c) in enumerate(
                zip(self.group_sizes, self.expected_pipeline, self.expected_daily_tests)
            )
        ]


def _keep(s, p):
    return (1.0 - p) ** np.asarray(s, dtype=float)


def _back(s, p):
    keep = _keep(s, p)
    return (1.0 - keep - p) * (1.0 - p)


def _day_cost(s, p):
    """Per-person tests on a day with first-stage size ``s`` (real ``s`` allowed)."""
    s = np.asarray(s, dtype=float)
    cost = 1.0 / s + 1.0 - _keep(s, p)
    # a pool of one is already an individual test
    return np.where(s == 1, 1.0, cost)


def expected_pipeline(n1: float, p: float, group_sizes: Sequence[float]) -> np.ndarray:
    """Expected number of people entering first-stage testing on each day."""
    sizes = np.asarray(group_sizes, dtype=float)
    if sizes.ndim != 1 or len(sizes) < 1:
        raise ValueError("group_sizes must be a nonempty sequence")
    if np.any(sizes < 1):
        raise ValueError("group sizes must be at least 1")
    if not 0 <= p <= 1:
        raise ValueError(f"p must be a probability, got {p}")
    t = len(sizes)
    keep = _keep(sizes, p)
    back = _back(sizes, p)
    n = np.zeros(t)
    n[0] = n1
    for d in range(1, t):
        n[d] = n[d - 1] * keep[d - 1]
        if d >= 2:
            n[d] += n[d - 2] * back[d - 2]
    return n


def expected_total_tests(n1: float, p: float, group_sizes: Sequence[float]) -> float:
    """Expected tests over the horizon, counting last-day second stages."""
    n = expected_pipeline(n1, p, group_sizes)
    return float(np.sum(n * _day_cost(group_sizes, p)))


def make_plan(n1: float, p: float, group_sizes: Sequence[float]) -> HorizonPlan:
    sizes = np.asarray(group_sizes)
    n = expected_pipeline(n1, p, sizes)
    daily = n * _day_cost(sizes, p)
    return HorizonPlan(p, sizes, n, float(daily.sum()), daily)


def default_s_max(p: float, pipeline: int) -> int:
    """Search cap: the pipeline size, bounded by ten times the ~1/sqrt(p) static scale."""
    if p <= 0:
        return max(1, int(pipeline))
    return max(1, min(int(pipeline), 10 * math.ceil(1 / math.sqrt(p))))


def _backward_sizes(p: float, t: int, s_max: int) -> np.ndarray:
    s = np.arange(1, s_max + 1)
    cost = cost_curve(p, s_max)
    keep = _keep(s, p)
    back = _back(s, p)
    values = np.zeros(t + 2)
    sizes = np.empty(t, dtype=np.int64)
    for d in range(t - 1, -1, -1):
        total = cost + keep * values[d + 1] + back * values[d + 2]
        best = total.min()
        k = int(np.flatnonzero(total <= best + _TIE_RTOL * max(1.0, best))[0])
        sizes[d] = k + 1
        values[d] = total[k]
    return sizes


def optimize_backward(p: float, t: int, s_max: int, n1: float = 1.0) -> HorizonPlan:
    """Per-day integer sizes minimizing expected total tests, by backward induction.

    ``V_d`` is the expected number of tests charged from day ``d`` on to one
    person entering first-stage testing on day ``d``. The optimal size on day
    ``d`` depends only on ``V_{d+1}`` and ``V_{d+2}``, never on earlier sizes
    or the realized pipeline, so the sizes are the same for every ``n1``.
    """
    if t < 1 or s_max < 1:
        raise ValueError("horizon and s_max must be positive")
    return make_plan(n1, p, _backward_sizes(p, t, s_max))


def continuation_values(p: float, group_sizes: Sequence[float]) -> np.ndarray:
    """``V_1..V_t`` for a fixed plan (tests per person entering on that day)."""
    sizes = np.asarray(group_sizes, dtype=float)
    t = len(sizes)
    values = np.zeros(t + 2)
    cost, keep, back = _day_cost(sizes, p), _keep(sizes, p), _back(sizes, p)
    for d in range(t - 1, -1, -1):
        values[d] = cost[d] + keep[d] * values[d + 1] + back[d] * values[d + 2]
    return values[:t]


def optimize_backward_continuous(p: float, t: int, s_max: float) -> np.ndarray:
    """Real-valued relaxation of :func:`optimize_backward`, for diagnostics."""
    if not 0 < p < 1:
        raise ValueError("continuous relaxation needs 0 < p < 1")
    integer = _backward_sizes(p, t, int(s_max))
    values = np.zeros(t + 2)
    sizes = np.empty(t)
    for d in range(t - 1, -1, -1):
        v1, v2 = values[d + 1], values[d + 2]

        def objective(x):
            keep = (1.0 - p) ** x
            return 1.0 / x + 1.0 - keep + keep * v1 + (1.0 - keep - p) * (1.0 - p) * v2

        # the integer optimum brackets the continuous one
        lo = max(1.0, integer[d] - 1.0)
        hi = min(float(s_max), integer[d] + 1.0)
        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10})
        x, best = float(res.x), float(res.fun)
        single = 1.0 + (1.0 - p) * v1  # individual testing, no second stage
        if single < best:
            x, best = 1.0, single
        sizes[d] = x
        values[d] = best
    return sizes


def static_plan(p: float, t: int, s_max: int) -> np.ndarray:
    """Same single-day optimum every day."""
    return np.full(t, optimal_group_size(p, None, s_max), dtype=np.int64)


def static_plan_continuous(p: float, t: int, s_max: float) -> np.ndarray:
    res = minimize_scalar(
        lambda x: 1.0 / x + 1.0 - (1.0 - p) ** x,
        bounds=(1.0, float(s_max)),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return np.full(t, float(res.x))


def brute_force_horizon(n1: float, p: float, t: int, s_max: int) -> HorizonPlan:
    """Exhaustive search over every size vector; ties go to the lexicographically smallest."""
    if t < 1 or s_max < 1:
        raise ValueError("horizon and s_max must be positive")
    if t > BRUTE_FORCE_MAX_T or s_max > BRUTE_FORCE_MAX_S:
        raise ValueError(
            f"brute force limited to t <= {BRUTE_FORCE_MAX_T}, s_max <= {BRUTE_FORCE_MAX_S}"
        )
    # rows enumerate size vectors in lexicographic order
    grid = np.array(list(itertools.product(range(1, s_max + 1), repeat=t)), dtype=float)
    keep = (1.0 - p) ** grid
    back = (1.0 - keep - p) * (1.0 - p)
    cost = np.array([[dorfman_cost_per_person(int(s), p) for s in range(1, s_max + 1)]])
    day_cost = cost[0][grid.astype(int) - 1]
    n = np.zeros_like(grid)
    n[:, 0] = n1
    for d in range(1, t):
        n[:, d] = n[:, d - 1] * keep[:, d - 1]
        if d >= 2:
            n[:, d] += n[:, d - 2] * back[:, d - 2]
    totals = (n * day_cost).sum(axis=1)
    best = totals.min()
    k = int(np.flatnonzero(totals <= best + _TIE_RTOL * max(1.0, abs(best)))[0])
    return make_plan(n1, p, grid[k].astype(np.int64))
