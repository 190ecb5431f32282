"""Static Dorfman cost calculus with quarantine costs.

All costs are per person, i.e. the community-level expectations divided by
the community size. Group sizes are integers; ``s == 1`` is individual
testing and costs exactly one test per person.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

PREVALENCE_FLOOR = 1e-6


@dataclass(frozen=True)
class CostParams:
    """Exponential quarantine cost base ``a`` and its weight ``alpha``."""

    a: float
    alpha: float

    def __post_init__(self):
        if not self.a > 1:
            raise ValueError(f"quarantine base a must exceed 1, got {self.a}")
        if not self.alpha >= 0:
            raise ValueError(f"weight alpha must be nonnegative, got {self.alpha}")


@dataclass(frozen=True)
class PrevalenceEstimate:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("prevalence estimates must lie in [0, 1]")
        object.__setattr__(self, "p", p)

    def __len__(self):
        return len(self.p)

    def __getitem__(self, j):
        return self.p[j]


def _check_prob(p: float, name: str = "p") -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must be a probability, got {p}")


def _check_size(s: int) -> None:
    if s < 1 or int(s) != s:
        raise ValueError(f"group size must be a positive integer, got {s}")


def expected_infected_in_contaminated_group(s: int, p: float) -> float:
    """Mean number of infected members of a pool of size ``s`` given it tested positive."""
    _check_size(s)
    _check_prob(p)
    if p == 0:
        raise ValueError("conditioning on a positive pool requires p > 0")
    return s * p / -math.expm1(s * math.log1p(-p)) if p < 1 else float(s)


def estimate_next_day_prevalence(
    contaminated_counts: Sequence[float], q1: float, q2: float
) -> PrevalenceEstimate:
    """Per-community infection probability for the next pooling round.

    ``contaminated_counts[j]`` is the number of infection sources attributed to
    community ``j``; each contaminated first-stage pool is taken to hold one.
    """
    counts = np.asarray(contaminated_counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("infection counts must be nonnegative")
    _check_prob(q1, "q1")
    _check_prob(q2, "q2")
    others = counts.sum() - counts
    # log-space keeps q = 1 and large counts well behaved
    with np.errstate(divide="ignore", invalid="ignore"):
        log_escape = _xlog1m(counts, q1) + _xlog1m(others, q2)
    p = -np.expm1(log_escape)
    return PrevalenceEstimate(np.clip(p, 0.0, 1.0))


def _xlog1m(k: np.ndarray, q: float) -> np.ndarray:
    # k * log(1 - q), with 0 * log(0) = 0
    if q == 1.0:
        return np.where(k > 0, -np.inf, 0.0)
    return k * math.log1p(-q)


def dorfman_cost_per_person(s: int, p: float) -> float:
    """Expected tests per person for two-stage Dorfman with first-stage size ``s``."""
    _check_size(s)
    _check_prob(p)
    if s == 1:
        return 1.0
    return 1.0 / s - math.expm1(s * math.log1p(-p)) if p < 1 else 1.0 / s + 1.0


def quarantine_cost_per_person(s: int, p: float, a: float) -> float:
    """Expected exponential quarantine cost per person, closed form."""
    _check_size(s)
    _check_prob(p)
    if not a > 1:
        raise ValueError(f"quarantine base a must exceed 1, got {a}")
    if s == 1 or p == 0 or p == 1:
        return 0.0
    u = a * (1 - p)
    # (u+p)^s - u^s = u^s * ((1 + p/u)^s - 1), stable when p << u
    lead = math.exp(s * math.log(u)) * math.expm1(s * math.log1p(p / u))
    return (lead - p**s) / s


def quarantine_cost_brute_force(s: int, p: float, a: float) -> float:
    """Explicit binomial sum over the number of uninfected members of a contaminated pool."""
    _check_size(s)
    _check_prob(p)
    if s > 64:
        raise ValueError("brute-force quarantine cost is limited to s <= 64")
    if s == 1 or p == 0 or p == 1:
        return 0.0
    total = 0.0
    for i in range(1, s):
        log_term = (
            math.lgamma(s + 1)
            - math.lgamma(i + 1)
            - math.lgamma(s - i + 1)
            + (s - i) * math.log(p)
            + i * math.log1p(-p)
            + i * math.log(a)
        )
        total += math.exp(log_term)
    return total / s


def combined_cost_per_person(s: int, p: float, params: CostParams) -> float:
    return dorfman_cost_per_person(s, p) + params.alpha * quarantine_cost_per_person(
        s, p, params.a
    )


def cost_curve(p: float, s_max: int, params: Optional[CostParams] = None) -> np.ndarray:
    """Vectorized objective over ``s = 1..s_max``; index ``i`` holds ``s = i + 1``."""
    _check_prob(p)
    s = np.arange(1, s_max + 1, dtype=float)
    with np.errstate(divide="ignore"):
        log_keep = s * math.log1p(-p) if p < 1 else np.full_like(s, -np.inf)
    cost = 1.0 / s - np.expm1(log_keep)
    cost[0] = 1.0
    if params is not None and 0 < p < 1:
        u = params.a * (1 - p)
        # huge a^s only overflows to inf, which never wins the argmin
        with np.errstate(over="ignore"):
            lead = np.exp(s * math.log(u)) * np.expm1(s * math.log1p(p / u))
        quar = (lead - p**s) / s
        quar[0] = 0.0
        cost = cost + params.alpha * quar
    return cost


def optimal_group_size(
    p: float, cost_params: Optional[CostParams] = None, s_max: int = 1000
) -> int:
    """Integer first-stage size minimizing the per-person objective.

    ``cost_params=None`` minimizes tests alone; otherwise the weighted test plus
    quarantine objective. Ties go to the smaller size.
    """
    if s_max < 1:
        raise ValueError("s_max must be at least 1")
    cost = cost_curve(p, s_max, cost_params)
    best = cost.min()
    # relative slack absorbs round-off between algebraically equal sizes
    tol = 1e-12 * max(1.0, abs(best))
    return int(np.flatnonzero(cost <= best + tol)[0]) + 1


def group_sizes_for(
    prevalence: PrevalenceEstimate,
    s_max: int,
    cost_params: Optional[CostParams] = None,
) -> np.ndarray:
    """Optimal size per community; prevalences are floored when positive."""
    sizes = np.empty(len(prevalence), dtype=np.int64)
    cache: dict[float, int] = {}
    for j, pj in enumerate(prevalence.p):
        pj = float(pj)
        if pj > 0:
            pj = max(pj, PREVALENCE_FLOOR)
        if pj not in cache:
            cache[pj] = optimal_group_size(pj, cost_params, s_max)
        sizes[j] = cache[pj]
    return sizes


def cost_table(
    ps: Sequence[float], params: CostParams, s_max: int = 1000
) -> list[dict[str, float]]:
    """Rows comparing the test-only and the combined optimizer at each prevalence.

    ``test_cost_pp`` and ``quarantine_cost_pp`` are evaluated at the combined
    optimum; the ``*_test_only`` columns at the test-only optimum.
    """
    rows = []
    for p in ps:
        s_test = optimal_group_size(p, None, s_max)
        s_comb = optimal_group_size(p, params, s_max)
        rows.append(
            {
                "p": float(p),
                "s_test_only": s_test,
                "s_combined": s_comb,
                "test_cost_pp": dorfman_cost_per_person(s_comb, p),
                "quarantine_cost_pp": quarantine_cost_per_person(s_comb, p, params.a),
                "test_cost_pp_test_only": dorfman_cost_per_person(s_test, p),
                "quarantine_cost_pp_test_only": quarantine_cost_per_person(s_test, p, params.a),
            }
        )
    return rows
