"""Population state and the daily stochastic transitions.

The population is stored as parallel numpy arrays indexed by individual;
isolation and quarantine are flags, so indices never change.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

SUSCEPTIBLE = 0
INFECTED = 1
RECOVERED = 2


@dataclass(frozen=True)
class SbmParams:
    population_size: int
    community_size: int
    q1: float
    q2: float
    p_init: float
    r: float = 0.0

    def __post_init__(self):
        if self.population_size < 1 or self.community_size < 1:
            raise ValueError("population and community sizes must be positive")
        if self.population_size % self.community_size:
            raise ValueError("community size must divide population")
        for name in ("q1", "q2", "p_init", "r"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.q2 > self.q1:
            raise ValueError("inter-community rate q2 must not exceed q1")

    @property
    def n_communities(self) -> int:
        return self.population_size // self.community_size


@dataclass
class PopulationState:
    community: np.ndarray
    status: np.ndarray
    isolated: np.ndarray
    quarantined: np.ndarray
    ever_infected: np.ndarray
    infected_day: np.ndarray
    day: int = 0

    @classmethod
    def new(cls, n: int, community_size: Optional[int] = None) -> "PopulationState":
        """Everyone susceptible; ``community_size=None`` puts all in one community."""
        c = n if community_size is None else community_size
        if n % c:
            raise ValueError("community size must divide population")
        return cls(
            community=np.arange(n) // c,
            status=np.zeros(n, dtype=np.int8),
            isolated=np.zeros(n, dtype=bool),
            quarantined=np.zeros(n, dtype=bool),
            ever_infected=np.zeros(n, dtype=bool),
            infected_day=np.full(n, -1, dtype=np.int64),
        )

    @property
    def size(self) -> int:
        return len(self.status)

    @property
    def n_communities(self) -> int:
        return int(self.community.max()) + 1 if self.size else 0

    @property
    def infected(self) -> np.ndarray:
        return self.status == INFECTED

    @property
    def active(self) -> np.ndarray:
        """Mixing with the population: neither isolated nor quarantined."""
        return ~(self.isolated | self.quarantined)

    def counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.status, minlength=3)
        return int(c[0]), int(c[1]), int(c[2])

    def copy(self) -> "PopulationState":
        return replace(
            self,
            **{
                k: getattr(self, k).copy()
                for k in ("community", "status", "isolated", "quarantined",
                          "ever_infected", "infected_day")
            },
        )

    def _infect(self, mask: np.ndarray) -> None:
        self.status[mask] = INFECTED
        self.ever_infected[mask] = True
        self.infected_day[mask] = self.day


def seed_infections(
    state: PopulationState, p_init: float, rng: np.random.Generator
) -> PopulationState:
    if state.day != 0 or np.any(state.status != SUSCEPTIBLE):
        raise ValueError("infections can only be seeded into an all-susceptible day-0 population")
    state._infect(rng.random(state.size) < p_init)
    return state


def infection_probability(k1, k2, q1: float, q2: float):
    """Chance a susceptible escapes none of ``k1`` same- and ``k2`` other-community sources."""
    return 1.0 - (1.0 - q1) ** k1 * (1.0 - q2) ** k2


def sbm_spread_step(
    state: PopulationState, params: SbmParams, rng: np.random.Generator
) -> np.ndarray:
    """One day of SBM transmission from the current active infected.

    Returns the mask of newly infected individuals.
    """
    active = state.active
    sources = state.infected & active
    n_comm = state.n_communities
    k1 = np.bincount(state.community[sources], minlength=n_comm)
    k2 = k1.sum() - k1
    if k1.sum() == 0:
        return np.zeros(state.size, dtype=bool)
    prob = infection_probability(k1, k2, params.q1, params.q2)
    at_risk = (state.status == SUSCEPTIBLE) & active
    new = at_risk & (rng.random(state.size) < prob[state.community])
    state._infect(new)
    return new


def recovery_step(
    state: PopulationState,
    r: float,
    rng: np.random.Generator,
    among: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Each infected individual in ``among`` (default: all infected) recovers w.p. ``r``."""
    candidates = state.infected if among is None else (among & state.infected)
    recovered = candidates & (rng.random(state.size) < r)
    state.status[recovered] = RECOVERED
    return recovered


def iid_spread_step(
    state: PopulationState, p: float, rng: np.random.Generator
) -> np.ndarray:
    """Every never-infected individual is infected independently with probability ``p``."""
    new = ~state.ever_infected & (rng.random(state.size) < p)
    state._infect(new)
    return new


def pool_outcome(members, state: PopulationState) -> bool:
    """Noiseless OR of the members' current infection indicators."""
    members = np.asarray(getattr(members, "members", members), dtype=np.int64)
    if members.size == 0:
        raise ValueError("cannot test an empty pool")
    return bool(np.any(state.status[members] == INFECTED))
