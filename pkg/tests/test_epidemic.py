import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyngt.epidemic import (
    INFECTED,
    RECOVERED,
    SUSCEPTIBLE,
    PopulationState,
    SbmParams,
    infection_probability,
    iid_spread_step,
    pool_outcome,
    recovery_step,
    sbm_spread_step,
    seed_infections,
)

BASE_SBM = SbmParams(1000, 50, 0.012, 0.0004, 0.02, 0.1)


def fresh(params=BASE_SBM):
    return PopulationState.new(params.population_size, params.community_size)


class TestSbmParams:
    def test_divisibility(self):
        with pytest.raises(ValueError, match="community size must divide population"):
            SbmParams(1000, 30, 0.012, 0.0004, 0.02)

    def test_probabilities(self):
        with pytest.raises(ValueError):
            SbmParams(100, 10, 1.2, 0.0, 0.1)
        with pytest.raises(ValueError):
            SbmParams(100, 10, 0.01, 0.02, 0.1)

    def test_communities(self):
        assert BASE_SBM.n_communities == 20


class TestSeedInfections:
    def test_degenerate(self):
        rng = np.random.default_rng(0)
        assert fresh().counts() == (1000, 0, 0)
        assert seed_infections(fresh(), 0.0, rng).counts() == (1000, 0, 0)
        assert seed_infections(fresh(), 1.0, rng).counts() == (0, 1000, 0)

    def test_binomial_mean(self):
        rng = np.random.default_rng(11)
        counts = np.array([seed_infections(fresh(), 0.02, rng).counts()[1] for _ in range(10_000)])
        se = math.sqrt(1000 * 0.02 * 0.98 / len(counts))
        assert abs(counts.mean() - 20) < 3 * se

    def test_only_on_fresh_state(self):
        rng = np.random.default_rng(0)
        state = seed_infections(fresh(), 0.5, rng)
        with pytest.raises(ValueError):
            seed_infections(state, 0.5, rng)

    def test_marks_day_zero(self):
        state = seed_infections(fresh(), 1.0, np.random.default_rng(0))
        assert np.all(state.infected_day == 0)
        assert np.all(state.ever_infected)


class TestSbmSpread:
    def test_no_sources(self):
        state = fresh()
        before = state.copy()
        new = sbm_spread_step(state, BASE_SBM, np.random.default_rng(0))
        assert not new.any()
        assert np.array_equal(state.status, before.status)

    def test_single_source(self):
        # one infected in community 0: infection rate q1 at home, q2 elsewhere
        rng = np.random.default_rng(5)
        n_rep = 20_000
        home = away = 0
        for _ in range(n_rep):
            state = fresh()
            state.status[0] = INFECTED
            new = sbm_spread_step(state, BASE_SBM, rng)
            home += new[1:50].sum()
            away += new[50:].sum()
        n_home, n_away = 49 * n_rep, 950 * n_rep
        assert abs(home / n_home - 0.012) < 3 * math.sqrt(0.012 * 0.988 / n_home)
        assert abs(away / n_away - 0.0004) < 3 * math.sqrt(0.0004 * 0.9996 / n_away)

    def test_mixed_sources_probability(self):
        p = infection_probability(2, 3, 0.012, 0.0004)
        assert p == pytest.approx(1 - 0.988**2 * 0.9996**3, rel=1e-15)
        assert p == pytest.approx(0.025027, abs=5e-7)

    def test_mixed_sources_against_pairwise(self):
        # susceptible 2 shares a community with sources 0, 1 and not with 50, 100, 150
        rng = np.random.default_rng(8)
        n_rep = 200_000
        pairs = rng.random((n_rep, 5)) < np.array([0.012] * 2 + [0.0004] * 3)
        pairwise = pairs.any(axis=1).mean()
        se = math.sqrt(0.025027 * (1 - 0.025027) / n_rep)
        assert abs(pairwise - infection_probability(2, 3, 0.012, 0.0004)) < 3 * se

        hits = 0
        n_sim = 20_000
        for _ in range(n_sim):
            state = fresh()
            state.status[[0, 1, 50, 100, 150]] = INFECTED
            hits += sbm_spread_step(state, BASE_SBM, rng)[2]
        se = math.sqrt(0.025027 * (1 - 0.025027) / n_sim)
        assert abs(hits / n_sim - 0.025027) < 3 * se

    def test_isolated_and_quarantined_do_not_mix(self):
        params = SbmParams(10, 5, 1.0, 1.0, 0.0)
        rng = np.random.default_rng(0)
        state = PopulationState.new(10, 5)
        state.status[0] = INFECTED
        state.isolated[0] = True
        assert not sbm_spread_step(state, params, rng).any()
        state.isolated[0] = False
        state.quarantined[3] = True
        new = sbm_spread_step(state, params, rng)
        assert not new[3] and new.sum() == 8

    def test_community_confinement(self):
        params = SbmParams(400, 20, 0.05, 0.0, 0.05, 0.1)
        rng = np.random.default_rng(2)
        for _ in range(20):
            state = PopulationState.new(400, 20)
            seed_infections(state, params.p_init, rng)
            seeded = np.bincount(state.community[state.ever_infected], minlength=20) > 0
            for d in range(1, 30):
                state.day = d
                infected_now = state.infected.copy()
                sbm_spread_step(state, params, rng)
                recovery_step(state, params.r, rng, among=infected_now)
            touched = np.bincount(state.community[state.ever_infected], minlength=20) > 0
            assert np.array_equal(touched, seeded)

    def test_recovered_are_immune(self):
        params = SbmParams(10, 10, 1.0, 1.0, 0.0)
        state = PopulationState.new(10)
        state.status[0] = INFECTED
        state.status[1:] = RECOVERED
        assert not sbm_spread_step(state, params, np.random.default_rng(0)).any()


def _pairwise_count_distribution(src_home, n_sus, q1, q2, src_away):
    """Exact law of the new-infection count by enumerating every source-target pair."""
    probs = np.array(([q1] * src_home + [q2] * src_away) * n_sus)
    n_pairs = len(probs)
    bits = (np.arange(2**n_pairs)[:, None] >> np.arange(n_pairs)) & 1
    weight = np.prod(np.where(bits == 1, probs, 1 - probs), axis=1)
    per_target = bits.reshape(-1, n_sus, src_home + src_away).any(axis=2)
    count = per_target.sum(axis=1)
    return np.bincount(count, weights=weight, minlength=n_sus + 1)


@pytest.mark.slow
def test_aggregation_matches_pairwise_enumeration():
    # 10 people in two communities of five; sources 0, 1 (home) and 5 (away)
    q1, q2 = 0.3, 0.1
    params = SbmParams(10, 5, q1, q2, 0.0)
    # community 0 targets: 2, 3, 4 see 2 home + 1 away; community 1 targets: 6..9 see 1 home + 2 away
    dist0 = _pairwise_count_distribution(2, 3, q1, q2, 1)
    dist1 = _pairwise_count_distribution(1, 4, q1, q2, 2)
    exact = np.convolve(dist0, dist1)
    assert exact.sum() == pytest.approx(1.0)

    rng = np.random.default_rng(13)
    n_draws = 1_000_000
    counts = np.zeros(len(exact))
    state = PopulationState.new(10, 5)
    base = state.status.copy()
    base[[0, 1, 5]] = INFECTED
    for _ in range(n_draws):
        state.status[:] = base
        counts[sbm_spread_step(state, params, rng).sum()] += 1
    freq = counts / n_draws
    se = np.sqrt(exact * (1 - exact) / n_draws)
    assert np.all(np.abs(freq - exact) <= 3 * se + 1e-12)
    mean_se = math.sqrt(np.sum(exact * np.arange(len(exact)) ** 2) / n_draws)
    assert abs(freq @ np.arange(len(freq)) - exact @ np.arange(len(exact))) < 3 * mean_se


class TestRecovery:
    def test_degenerate(self):
        rng = np.random.default_rng(0)
        state = seed_infections(fresh(), 0.5, rng)
        n_inf = state.counts()[1]
        assert not recovery_step(state, 0.0, rng).any()
        assert recovery_step(state, 1.0, rng).sum() == n_inf
        assert state.counts()[1] == 0

    def test_binomial_mean(self):
        rng = np.random.default_rng(4)
        counts = []
        for _ in range(5000):
            state = PopulationState.new(200)
            state.status[:] = INFECTED
            counts.append(recovery_step(state, 0.1, rng).sum())
        se = math.sqrt(200 * 0.1 * 0.9 / len(counts))
        assert abs(np.mean(counts) - 20) < 3 * se

    def test_only_snapshot_recovers(self):
        state = PopulationState.new(4)
        state.status[:] = INFECTED
        among = np.array([True, False, True, False])
        recovery_step(state, 1.0, np.random.default_rng(0), among=among)
        assert list(state.status) == [RECOVERED, INFECTED, RECOVERED, INFECTED]


class TestIidSpread:
    def test_no_prevalence(self):
        state = PopulationState.new(100)
        assert not iid_spread_step(state, 0.0, np.random.default_rng(0)).any()

    @pytest.mark.parametrize("n,p,mean", [(1000, 0.035, 35.0), (500, 0.12, 60.0)])
    def test_binomial_mean(self, n, p, mean):
        rng = np.random.default_rng(21)
        counts = [iid_spread_step(PopulationState.new(n), p, rng).sum() for _ in range(4000)]
        se = math.sqrt(n * p * (1 - p) / len(counts))
        assert abs(np.mean(counts) - mean) < 3 * se

    def test_never_reinfects(self):
        rng = np.random.default_rng(0)
        state = PopulationState.new(50)
        iid_spread_step(state, 1.0, rng)
        state.status[:] = RECOVERED
        assert not iid_spread_step(state, 1.0, rng).any()


class TestPoolOutcome:
    def test_negative(self):
        state = PopulationState.new(5)
        state.status[:] = [SUSCEPTIBLE, RECOVERED, SUSCEPTIBLE, RECOVERED, SUSCEPTIBLE]
        assert pool_outcome([0, 1, 2, 3, 4], state) is False

    def test_any_positive(self):
        state = PopulationState.new(5)
        state.status[3] = INFECTED
        assert pool_outcome([0, 1, 3], state) is True
        assert pool_outcome([3], state) is True
        assert pool_outcome([0, 1], state) is False

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            pool_outcome([], PopulationState.new(3))

    @settings(max_examples=50)
    @given(st.lists(st.sampled_from([SUSCEPTIBLE, INFECTED, RECOVERED]), min_size=1, max_size=20))
    def test_is_or_of_members(self, statuses):
        state = PopulationState.new(len(statuses))
        state.status[:] = statuses
        assert pool_outcome(range(len(statuses)), state) == (INFECTED in statuses)


def test_conservation_and_monotonicity():
    rng = np.random.default_rng(9)
    state = seed_infections(fresh(), 0.02, rng)
    ever, rec = 0, 0
    for d in range(1, 60):
        state.day = d
        prev_status = state.status.copy()
        infected_now = state.infected.copy()
        sbm_spread_step(state, BASE_SBM, rng)
        recovery_step(state, BASE_SBM.r, rng, among=infected_now)
        s, i, r = state.counts()
        assert s + i + r == 1000
        assert state.ever_infected.sum() >= ever and r >= rec
        ever, rec = state.ever_infected.sum(), r
        # recovered is absorbing; nobody goes back to susceptible
        assert np.all(state.status[prev_status == RECOVERED] == RECOVERED)
        assert not np.any((prev_status != SUSCEPTIBLE) & (state.status == SUSCEPTIBLE))


def test_copy_is_independent():
    state = fresh()
    other = state.copy()
    other.status[0] = INFECTED
    assert state.status[0] == SUSCEPTIBLE


def test_all_in_one_community_by_default():
    state = PopulationState.new(7)
    assert state.n_communities == 1
    assert list(itertools.islice(state.community, 3)) == [0, 0, 0]
