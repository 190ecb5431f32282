"""Daily phase loop, per-day metrics and seeded Monte Carlo batches."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .epidemic import (
    INFECTED,
    RECOVERED,
    PopulationState,
    SbmParams,
    iid_spread_step,
    recovery_step,
    sbm_spread_step,
    seed_infections,
)
from .horizon import default_s_max, optimize_backward, static_plan
from .protocols import CcaConfig, CcaScheduler, DorfmanScheduler, QuarantinePolicy

log = logging.getLogger(__name__)

DAY_COLUMNS = (
    "day",
    "tests_registered",
    "cum_infected",
    "active_infected",
    "isolated",
    "quarantined_uninfected",
    "pipeline_size",
    "undetected_gt2",
    "quarantine_cost_realized",
)


@dataclass(frozen=True)
class IidParams:
    population_size: int
    p: float

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population size must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be a probability, got {self.p}")


@dataclass(frozen=True)
class Dorfman:
    policy: QuarantinePolicy = field(default_factory=QuarantinePolicy)
    # i.i.d. model only: "horizon" (backward-optimized) or "static" sizes
    sizing: str = "horizon"

    def __post_init__(self):
        if self.sizing not in ("horizon", "static"):
            raise ValueError(f"unknown sizing {self.sizing!r}")


@dataclass(frozen=True)
class Cca:
    config: CcaConfig = field(default_factory=CcaConfig)


Model = Union[SbmParams, IidParams]
Protocol = Union[Dorfman, Cca]


@dataclass
class TrajectoryMetrics:
    """Per-day records (index ``d - 1`` for day ``d``) plus end-of-run totals."""

    population_size: int
    seed: int
    tests_registered: np.ndarray
    cum_infected: np.ndarray
    active_infected: np.ndarray
    isolated: np.ndarray
    quarantined: np.ndarray
    quarantined_uninfected: np.ndarray
    pipeline_size: np.ndarray
    undetected_gt2: np.ndarray
    quarantine_cost_realized: np.ndarray
    trailing_tests: int = 0
    false_isolations: int = 0
    late_detections: int = 0

    @property
    def horizon(self) -> int:
        return len(self.tests_registered)

    @property
    def total_tests(self) -> int:
        return int(self.tests_registered.sum()) + self.trailing_tests

    @property
    def final_infected(self) -> int:
        return int(self.cum_infected[-1]) if self.horizon else 0

    @property
    def final_infected_frac(self) -> float:
        return self.final_infected / self.population_size

    @property
    def quarantine_person_days(self) -> int:
        return int(self.quarantined_uninfected.sum())

    def rows(self) -> list[dict]:
        return [
            {
                "day": d + 1,
                "tests_registered": int(self.tests_registered[d]),
                "cum_infected": int(self.cum_infected[d]),
                "active_infected": int(self.active_infected[d]),
                "isolated": int(self.isolated[d]),
                "quarantined_uninfected": int(self.quarantined_uninfected[d]),
                "pipeline_size": int(self.pipeline_size[d]),
                "undetected_gt2": int(self.undetected_gt2[d]),
                "quarantine_cost_realized": float(self.quarantine_cost_realized[d]),
            }
            for d in range(self.horizon)
        ]


def detect_explosion(metrics: TrajectoryMetrics, threshold_fraction: float = 0.5) -> bool:
    return metrics.final_infected_frac >= threshold_fraction


def _validate(model: Model, protocol: Protocol, horizon: int) -> None:
    if horizon < 1:
        raise ValueError("horizon must be at least one day")
    if not isinstance(model, (SbmParams, IidParams)):
        raise TypeError(f"unsupported model {model!r}")
    if not isinstance(protocol, (Dorfman, Cca)):
        raise TypeError(f"unsupported protocol {protocol!r}")


def _make_scheduler(model: Model, protocol: Protocol, horizon: int):
    if isinstance(protocol, Cca):
        if isinstance(model, SbmParams):
            return CcaScheduler(protocol.config, q1=model.q1, q2=model.q2,
                                p_first_day=model.p_init)
        return CcaScheduler(protocol.config, p=model.p)
    if isinstance(model, SbmParams):
        return DorfmanScheduler(
            protocol.policy,
            s_max=model.community_size,
            q1=model.q1,
            q2=model.q2,
            p_first_day=model.p_init,
        )
    s_max = default_s_max(model.p, model.population_size)
    if model.p <= 0:
        plan = np.full(horizon, s_max)
    elif protocol.sizing == "horizon":
        plan = optimize_backward(model.p, horizon, s_max).group_sizes
    else:
        plan = static_plan(model.p, horizon, s_max)
    return DorfmanScheduler(protocol.policy, s_max=model.population_size, plan=plan)


class _DetectionAudit:
    """Tracks the two-day detection promise and false isolations for Dorfman runs."""

    NEVER = np.iinfo(np.int64).max

    def __init__(self, n: int):
        self.deadline = np.full(n, self.NEVER, dtype=np.int64)
        self.late = 0
        self.false = 0

    def registered(self, state: PopulationState, ledger) -> None:
        due = (ledger.pool_of >= 0) & (state.status == INFECTED)
        self.deadline[due] = np.minimum(self.deadline[due], state.day + 2)

    def resolved(self, state: PopulationState) -> None:
        self.false += int(np.sum(state.isolated & ~state.ever_infected))
        expired = self.deadline <= state.day
        self.late += int(np.sum(expired & ~state.isolated & (state.status == INFECTED)))
        # recovery before the individual test excuses a miss
        done = state.isolated | (state.status == RECOVERED) | expired
        self.deadline[done] = self.NEVER


def run_trajectory(
    model: Model, protocol: Protocol, horizon: int, seed: int
) -> TrajectoryMetrics:
    """Simulate one trajectory of ``horizon`` days.

    Day 0 only seeds infections. Each day ``d`` then runs: resolve yesterday's
    results (d-), register today's tests (d+), spread and recover (d++). After
    the last day the pending results are resolved and, for Dorfman, the owed
    individual tests are registered, charged and resolved too.
    """
    _validate(model, protocol, horizon)
    rng = np.random.default_rng(seed)
    n = model.population_size
    if isinstance(model, SbmParams):
        state = PopulationState.new(n, model.community_size)
        seed_infections(state, model.p_init, rng)
    else:
        state = PopulationState.new(n)
        iid_spread_step(state, model.p, rng)

    sched = _make_scheduler(model, protocol, horizon)
    dorfman = isinstance(sched, DorfmanScheduler)
    audit = _DetectionAudit(n) if dorfman else None
    cost = protocol.policy.cost if dorfman else None
    n_comm = state.n_communities

    cols = {name: np.zeros(horizon, dtype=np.int64) for name in DAY_COLUMNS[1:-1]}
    cols["quarantined"] = np.zeros(horizon, dtype=np.int64)
    qcost = np.zeros(horizon)

    for d in range(1, horizon + 1):
        state.day = d
        sched.resolve(state)
        if audit:
            audit.resolved(state)
        wasted = state.quarantined & (state.status != INFECTED)
        if cost is not None and wasted.any():
            x = np.bincount(state.community[wasted], minlength=n_comm)
            qcost[d - 1] = float(np.sum(np.power(cost.a, x[x > 0])))

        ledger = sched.register(state, rng)
        if audit:
            audit.registered(state, ledger)

        infected_now = state.infected.copy()
        if isinstance(model, SbmParams):
            sbm_spread_step(state, model, rng)
            recovery_step(state, model.r, rng, among=infected_now)
        else:
            iid_spread_step(state, model.p, rng)

        i = d - 1
        cols["tests_registered"][i] = ledger.n_tests
        cols["cum_infected"][i] = state.ever_infected.sum()
        cols["active_infected"][i] = np.sum(state.infected & ~state.isolated)
        cols["isolated"][i] = state.isolated.sum()
        cols["quarantined"][i] = state.quarantined.sum()
        cols["quarantined_uninfected"][i] = wasted.sum()
        cols["pipeline_size"][i] = ledger.pipeline_size
        undetected = state.infected & ~state.isolated & (d - state.infected_day > 2)
        cols["undetected_gt2"][i] = undetected.sum()

    trailing = 0
    state.day = horizon + 1
    sched.resolve(state)
    if dorfman:
        audit.resolved(state)
        trailing = sched.register(state, rng, second_only=True).n_tests
        state.day = horizon + 2
        sched.resolve(state)
        audit.resolved(state)

    return TrajectoryMetrics(
        population_size=n,
        seed=seed,
        quarantine_cost_realized=qcost,
        trailing_tests=trailing,
        false_isolations=audit.false if audit else 0,
        late_detections=audit.late if audit else 0,
        **cols,
    )


@dataclass
class BatchSummary:
    n_traj: int
    mean_final_infected_frac: float
    q10: float
    q50: float
    q90: float
    explosion_frac: float
    mean_total_tests: float
    mean_quarantine_person_days: float
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(
    trajectories: list[TrajectoryMetrics], base_seed: int, threshold: float = 0.5
) -> BatchSummary:
    if not trajectories:
        raise ValueError("no trajectories to summarize")
    # seed order makes the reduction independent of completion order
    trajs = sorted(trajectories, key=lambda m: m.seed)
    frac = np.array([m.final_infected_frac for m in trajs])
    q10, q50, q90 = np.quantile(frac, [0.1, 0.5, 0.9])
    return BatchSummary(
        n_traj=len(trajs),
        mean_final_infected_frac=float(frac.mean()),
        q10=float(q10),
        q50=float(q50),
        q90=float(q90),
        explosion_frac=float(np.mean([detect_explosion(m, threshold) for m in trajs])),
        mean_total_tests=float(np.mean([m.total_tests for m in trajs])),
        mean_quarantine_person_days=float(np.mean([m.quarantine_person_days for m in trajs])),
        seed=base_seed,
    )


def _run_one(args):
    return run_trajectory(*args)


def run_batch(
    model: Model,
    protocol: Protocol,
    horizon: int,
    n_traj: int,
    base_seed: int = 0,
    *,
    n_jobs: int = 1,
    threshold: float = 0.5,
) -> tuple[BatchSummary, list[TrajectoryMetrics]]:
    """Run trajectories with seeds ``base_seed + k`` and summarize them."""
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    _validate(model, protocol, horizon)
    jobs = [(model, protocol, horizon, base_seed + k) for k in range(n_traj)]
    if n_jobs == 1:
        trajs = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            trajs = list(pool.map(_run_one, jobs, chunksize=max(1, n_traj // (4 * n_jobs))))
    log.debug("ran %d trajectories from seed %d", n_traj, base_seed)
    return summarize(trajs, base_seed, threshold), trajs
