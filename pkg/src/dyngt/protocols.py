"""Who gets tested when.

Two daily protocols share the same calling convention: ``resolve(state)`` at
d- ingests the results of the tests registered the day before, and
``register(state, rng)`` at d+ submits today's tests. Test outcomes are
evaluated on the population as it is at registration, before that night's
spread, and only become visible at the next resolve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .epidemic import INFECTED, PopulationState
from .objectives import (
    CostParams,
    PrevalenceEstimate,
    estimate_next_day_prevalence,
    group_sizes_for,
)

FIRST = 1
SECOND = 2

_EMPTY = np.zeros(0, dtype=np.int64)


@dataclass(frozen=True)
class QuarantinePolicy:
    """``none``, ``quarantine`` or ``cost_aware`` (which needs ``cost``)."""

    variant: str = "none"
    cost: Optional[CostParams] = None

    VARIANTS = ("none", "quarantine", "cost_aware")

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise ValueError(f"unknown quarantine policy {self.variant!r}")
        if self.variant == "cost_aware" and self.cost is None:
            raise ValueError("cost_aware policy requires cost parameters")

    @property
    def quarantines(self) -> bool:
        return self.variant != "none"

    @property
    def objective(self) -> Optional[CostParams]:
        """Cost parameters for group sizing, ``None`` for the test-only objective."""
        return self.cost if self.variant == "cost_aware" else None


@dataclass(frozen=True)
class TestPool:
    __test__ = False  # not a pytest class

    id: int
    members: tuple
    stage: int
    community: int
    day: int


@dataclass
class DayLedger:
    """Tests registered on one day and their (not yet revealed) outcomes."""

    day: int
    n_individuals: int
    pool_of: np.ndarray
    pool_positive: np.ndarray
    pool_size: np.ndarray
    pool_community: np.ndarray
    second: np.ndarray = field(default_factory=lambda: _EMPTY)
    second_positive: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def n_first(self) -> int:
        return len(self.pool_positive)

    @property
    def n_tests(self) -> int:
        return self.n_first + len(self.second)

    @property
    def pipeline_size(self) -> int:
        return int(self.pool_size.sum())

    def contaminated_counts(self, n_communities: int) -> np.ndarray:
        return np.bincount(
            self.pool_community[self.pool_positive], minlength=n_communities
        )

    def pools(self) -> list[TestPool]:
        members = np.flatnonzero(self.pool_of >= 0)
        order = np.argsort(self.pool_of[members], kind="stable")
        split = np.split(members[order], np.cumsum(self.pool_size)[:-1])
        out = [
            TestPool(k, tuple(int(i) for i in m), FIRST, int(self.pool_community[k]), self.day)
            for k, m in enumerate(split)
            if len(m)
        ]
        for k, i in enumerate(self.second):
            out.append(TestPool(self.n_first + k, (int(i),), SECOND, -1, self.day))
        return out


@dataclass
class Resolution:
    """What the results revealed at d- and what was done about it."""

    day: int
    isolated: np.ndarray
    released: np.ndarray
    second_due: np.ndarray
    quarantined: np.ndarray
    exempt: np.ndarray
    contaminated: np.ndarray
    second_positive: np.ndarray


def _empty_resolution(day: int, n_communities: int) -> Resolution:
    zeros = np.zeros(n_communities, dtype=np.int64)
    return Resolution(day, _EMPTY, _EMPTY, _EMPTY, _EMPTY, _EMPTY, zeros, zeros.copy())


def dorfman_resolve(
    ledger: Optional[DayLedger], state: PopulationState, policy: QuarantinePolicy
) -> Resolution:
    """Act on yesterday's results: isolate positives, queue and quarantine contaminated pools.

    Quarantines imposed the previous day end here regardless of outcome.
    """
    n_comm = state.n_communities
    state.quarantined[:] = False
    if ledger is None:
        return _empty_resolution(state.day, n_comm)

    in_first = ledger.pool_of >= 0
    if np.any(state.isolated[in_first]) or np.any(state.isolated[ledger.second]):
        raise RuntimeError("ledger references an individual that is already isolated")

    second_pos = ledger.second[ledger.second_positive]
    released = ledger.second[~ledger.second_positive]

    pool_pos = ledger.pool_positive
    member_pool = ledger.pool_of[in_first]
    members = np.flatnonzero(in_first)
    hit = pool_pos[member_pool]
    singleton = ledger.pool_size[member_pool] == 1
    # a positive pool of one already identifies its member
    direct_pos = members[hit & singleton]
    second_due = members[hit & ~singleton]

    isolated = np.concatenate([second_pos, direct_pos])
    state.isolated[isolated] = True

    if policy.quarantines:
        state.quarantined[second_due] = True
        quarantined, exempt = second_due, released
    else:
        quarantined, exempt = _EMPTY, _EMPTY

    return Resolution(
        day=state.day,
        isolated=isolated,
        released=released,
        second_due=second_due,
        quarantined=quarantined,
        exempt=exempt,
        contaminated=ledger.contaminated_counts(n_comm),
        second_positive=np.bincount(state.community[second_pos], minlength=n_comm),
    )


def partition_pools(
    candidates: np.ndarray,
    community: np.ndarray,
    sizes: np.ndarray,
    rng: np.random.Generator,
):
    """Randomly split ``candidates`` into same-community pools.

    ``sizes[j]`` is the pool size for community ``j``; each community gets at
    most one smaller residual pool. Returns per-candidate pool ids, pool sizes
    and pool communities.
    """
    if len(candidates) == 0:
        return _EMPTY, _EMPTY, _EMPTY
    comm = community[candidates]
    order = np.lexsort((rng.random(len(candidates)), comm))
    comm_sorted = comm[order]
    n_comm = len(sizes)
    counts = np.bincount(comm_sorted, minlength=n_comm)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.arange(len(candidates)) - starts[comm_sorted]
    s = np.maximum(np.asarray(sizes, dtype=np.int64), 1)
    local = rank // s[comm_sorted]
    n_pools = -(-counts // s)
    offsets = np.concatenate([[0], np.cumsum(n_pools)[:-1]])
    pool_sorted = offsets[comm_sorted] + local
    pool_ids = np.empty(len(candidates), dtype=np.int64)
    pool_ids[order] = pool_sorted
    pool_size = np.bincount(pool_sorted, minlength=int(n_pools.sum()))
    pool_comm = np.repeat(np.arange(n_comm), n_pools)
    return pool_ids, pool_size, pool_comm


def dorfman_register(
    state: PopulationState,
    policy: QuarantinePolicy,
    prevalence: Optional[PrevalenceEstimate],
    rng: np.random.Generator,
    *,
    s_max: int,
    second_due: Sequence[int] = (),
    exempt: Sequence[int] = (),
    sizes: Optional[np.ndarray] = None,
) -> DayLedger:
    """Submit today's first-stage pools and second-stage individual tests.

    Pool sizes come from ``sizes`` when given, otherwise from the
    per-community prevalence under the policy's objective.
    """
    n = state.size
    second_due = np.asarray(second_due, dtype=np.int64)
    exempt = np.asarray(exempt, dtype=np.int64)
    if sizes is None:
        sizes = group_sizes_for(prevalence, s_max, policy.objective)

    eligible = state.active.copy()
    eligible[second_due] = False
    eligible[exempt] = False
    candidates = np.flatnonzero(eligible)
    pool_ids, pool_size, pool_comm = partition_pools(
        candidates, state.community, sizes, rng
    )
    pool_of = np.full(n, -1, dtype=np.int64)
    pool_of[candidates] = pool_ids
    infected = state.status[candidates] == INFECTED
    pool_positive = np.bincount(pool_ids, weights=infected, minlength=len(pool_size)) > 0

    second = np.sort(second_due)
    return DayLedger(
        day=state.day,
        n_individuals=n,
        pool_of=pool_of,
        pool_positive=pool_positive,
        pool_size=pool_size,
        pool_community=pool_comm,
        second=second,
        second_positive=state.status[second] == INFECTED,
    )


class DorfmanScheduler:
    """Daily two-stage Dorfman testing with one-day result delay.

    Group sizes come either from a fixed per-day plan (``plan``) or from the
    per-community prevalence estimated from yesterday's contaminated pools
    (``q1``, ``q2``, seeded with ``p_first_day`` on day one).
    """

    def __init__(
        self,
        policy: QuarantinePolicy,
        s_max: int,
        *,
        q1: float = 0.0,
        q2: float = 0.0,
        p_first_day: float = 0.0,
        plan: Optional[Sequence[int]] = None,
    ):
        self.policy = policy
        self.s_max = s_max
        self.q1, self.q2 = q1, q2
        self.p_first_day = p_first_day
        self.plan = None if plan is None else np.asarray(plan, dtype=np.int64)
        self.pending: Optional[DayLedger] = None
        self.last: Optional[Resolution] = None
        self.prevalence: Optional[PrevalenceEstimate] = None

    def resolve(self, state: PopulationState) -> Resolution:
        res = dorfman_resolve(self.pending, state, self.policy)
        self.pending = None
        self.last = res
        n_comm = state.n_communities
        if res.day <= 1:
            self.prevalence = PrevalenceEstimate(np.full(n_comm, self.p_first_day))
        else:
            sources = res.contaminated
            if not self.policy.quarantines:
                sources = sources + res.second_positive
            self.prevalence = estimate_next_day_prevalence(sources, self.q1, self.q2)
        return res

    def _plan_sizes(self, state: PopulationState, n_candidates: int) -> Optional[np.ndarray]:
        if self.plan is None:
            return None
        s = int(self.plan[min(state.day, len(self.plan)) - 1])
        s = max(1, min(s, self.s_max, max(n_candidates, 1)))
        return np.full(state.n_communities, s, dtype=np.int64)

    def register(
        self, state: PopulationState, rng: np.random.Generator, *, second_only: bool = False
    ) -> DayLedger:
        res = self.last or _empty_resolution(state.day, state.n_communities)
        if second_only:
            ledger = DayLedger(
                day=state.day,
                n_individuals=state.size,
                pool_of=np.full(state.size, -1, dtype=np.int64),
                pool_positive=np.zeros(0, dtype=bool),
                pool_size=_EMPTY,
                pool_community=_EMPTY,
                second=np.sort(res.second_due),
                second_positive=state.status[np.sort(res.second_due)] == INFECTED,
            )
        else:
            n_candidates = int(state.active.sum())
            ledger = dorfman_register(
                state,
                self.policy,
                self.prevalence,
                rng,
                s_max=self.s_max,
                second_due=res.second_due,
                exempt=res.exempt,
                sizes=self._plan_sizes(state, n_candidates),
            )
        self.pending = ledger
        return ledger


# --- non-adaptive baseline -------------------------------------------------


@dataclass(frozen=True)
class CcaConfig:
    """Daily test budget for the non-adaptive baseline.

    ``mu_log``: ``c * (1 + delta) * e * mu * ln N_d`` tests;
    ``pn_log``: ``c * (1 + delta) * e * p * N_d * ln N_d`` tests.
    """

    rule: str = "mu_log"
    c: float = 1.6
    delta: float = 0.0

    def __post_init__(self):
        if self.rule not in ("mu_log", "pn_log"):
            raise ValueError(f"unknown budget rule {self.rule!r}")
        if not self.c > 0:
            raise ValueError("budget constant must be positive")
        if not self.delta >= 0:
            raise ValueError("slack delta must be nonnegative")


def cca_budget(n_d: int, mu: float, p: float, config: CcaConfig) -> int:
    if n_d < 1:
        raise ValueError("population to test must be nonempty")
    scale = mu if config.rule == "mu_log" else p * n_d
    raw = config.c * (1 + config.delta) * math.e * scale * math.log(n_d)
    return max(1, math.ceil(raw))


def cca_design(
    n_items: int, n_tests: int, mu: float, rng: np.random.Generator
) -> sparse.csr_matrix:
    """Bernoulli test design: each item joins each test with probability ``min(1, 1/mu)``.

    Returned as a ``n_tests x n_items`` sparse 0/1 matrix.
    """
    if n_tests < 1:
        raise ValueError("need at least one test")
    if not mu > 0:
        raise ValueError("mu must be positive")
    q = min(1.0, 1.0 / mu)
    total = n_tests * n_items
    if q >= 1.0:
        flat = np.arange(total, dtype=np.int64)
    else:
        # gaps between successive ones of a Bernoulli(q) sequence are geometric
        expect = total * q
        chunk = int(expect + 6 * math.sqrt(expect + 1) + 16)
        pos = np.cumsum(rng.geometric(q, size=chunk)) - 1
        while pos[-1] < total:
            more = np.cumsum(rng.geometric(q, size=chunk)) + pos[-1]
            pos = np.concatenate([pos, more])
        flat = pos[pos < total]
    rows, cols = np.divmod(flat, n_items)
    data = np.ones(len(flat), dtype=np.int8)
    return sparse.csr_matrix((data, (rows, cols)), shape=(n_tests, n_items))


def design_outcomes(matrix, infected: np.ndarray) -> np.ndarray:
    """Noiseless OR of member infection indicators, one per test (row)."""
    m = sparse.csr_matrix(matrix)
    return (m @ np.asarray(infected, dtype=np.int64)) > 0


@dataclass
class DdResult:
    positive: np.ndarray
    cleared: np.ndarray

    @property
    def unresolved(self) -> np.ndarray:
        """Never in a negative test yet not pinned down as defective."""
        return ~self.cleared & ~self.positive


def dd_decode(matrix, outcomes) -> DdResult:
    """Definite-defectives decoding.

    Anyone in a negative test is cleared. A positive test whose only uncleared
    member is a single item marks that item positive. Everyone else is called
    negative, so the decoder can miss infections but never accuses wrongly.
    """
    m = sparse.coo_matrix(matrix)
    outcomes = np.asarray(outcomes, dtype=bool).ravel()
    n_tests, n_items = m.shape
    if len(outcomes) != n_tests:
        raise ValueError("one outcome per test required")
    rows, cols = m.row[m.data != 0], m.col[m.data != 0]
    neg_entry = ~outcomes[rows]
    cleared = np.bincount(cols[neg_entry], minlength=n_items) > 0
    open_entry = outcomes[rows] & ~cleared[cols]
    n_open = np.bincount(rows[open_entry], minlength=n_tests)
    lone = open_entry & (n_open[rows] == 1)
    positive = np.zeros(n_items, dtype=bool)
    positive[cols[lone]] = True
    return DdResult(positive=positive, cleared=cleared)


@dataclass
class CcaLedger:
    day: int
    tested: np.ndarray
    matrix: sparse.csr_matrix
    outcomes: np.ndarray
    mu: float

    @property
    def n_tests(self) -> int:
        return self.matrix.shape[0]

    @property
    def pipeline_size(self) -> int:
        return len(self.tested)


class CcaScheduler:
    """Fresh non-adaptive design each day over everyone not isolated, DD decoded.

    With ``p`` set (i.i.d. model) the expected number of defectives is
    ``p * N_d``. Otherwise it is rebuilt from yesterday's decoded positives
    through the SBM infection probabilities, plus the part of yesterday's
    expectation the decoder failed to find, floored at 1.
    """

    def __init__(
        self,
        config: CcaConfig,
        *,
        p: Optional[float] = None,
        q1: float = 0.0,
        q2: float = 0.0,
        p_first_day: float = 0.0,
    ):
        self.config = config
        self.p = p
        self.q1, self.q2 = q1, q2
        self.p_first_day = p_first_day
        self.pending: Optional[CcaLedger] = None
        self.last_positive = _EMPTY
        self.last_mu = 0.0
        self.unresolved = 0

    def resolve(self, state: PopulationState) -> np.ndarray:
        led = self.pending
        self.pending = None
        if led is None:
            self.last_positive = _EMPTY
            self.unresolved = 0
            return _EMPTY
        if np.any(state.isolated[led.tested]):
            raise RuntimeError("ledger references an individual that is already isolated")
        res = dd_decode(led.matrix, led.outcomes)
        found = led.tested[res.positive]
        state.isolated[found] = True
        self.last_positive = found
        self.last_mu = led.mu
        self.unresolved = int(res.unresolved.sum())
        return found

    def expected_defectives(self, state: PopulationState, tested: np.ndarray) -> float:
        n_d = len(tested)
        if self.p is not None:
            return self.p * n_d
        if state.day <= 1:
            return max(1.0, self.p_first_day * n_d)
        n_comm = state.n_communities
        sources = np.bincount(state.community[self.last_positive], minlength=n_comm)
        prev = estimate_next_day_prevalence(sources, self.q1, self.q2).p
        per_comm = np.bincount(state.community[tested], minlength=n_comm)
        carry = max(0.0, self.last_mu - len(self.last_positive))
        return max(1.0, float(per_comm @ prev) + carry)

    def register(self, state: PopulationState, rng: np.random.Generator) -> CcaLedger:
        tested = np.flatnonzero(~state.isolated)
        if len(tested) == 0:
            led = CcaLedger(state.day, tested, sparse.csr_matrix((0, 0)), np.zeros(0, bool), 0.0)
            self.pending = None
            return led
        mu = self.expected_defectives(state, tested)
        p = self.p if self.p is not None else 0.0
        t_d = cca_budget(len(tested), mu, p, self.config)
        matrix = cca_design(len(tested), t_d, max(mu, 1.0), rng)
        outcomes = design_outcomes(matrix, state.status[tested] == INFECTED)
        self.pending = CcaLedger(state.day, tested, matrix, outcomes, mu)
        return self.pending
