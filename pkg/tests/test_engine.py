import numpy as np
import pytest

from dyngt.engine import (
    Cca,
    Dorfman,
    IidParams,
    detect_explosion,
    run_batch,
    run_trajectory,
    summarize,
)
from dyngt.epidemic import SbmParams
from dyngt.objectives import CostParams
from dyngt.protocols import CcaConfig, QuarantinePolicy

SBM = SbmParams(1000, 50, 0.012, 0.0004, 0.02, 0.1)
POLICIES = [
    QuarantinePolicy("none"),
    QuarantinePolicy("quarantine"),
    QuarantinePolicy("cost_aware", CostParams(1.5, 2.0)),
]


def same_metrics(a, b):
    return all(np.array_equal(getattr(a, k), getattr(b, k)) for k in vars(a))


@pytest.mark.parametrize(
    "model,protocol",
    [
        (SBM, Dorfman()),
        (SBM, Cca()),
        (IidParams(500, 0.05), Dorfman()),
        (IidParams(500, 0.05), Cca(CcaConfig("pn_log", 0.8))),
    ],
)
def test_deterministic(model, protocol):
    a = run_trajectory(model, protocol, 20, seed=42)
    b = run_trajectory(model, protocol, 20, seed=42)
    c = run_trajectory(model, protocol, 20, seed=43)
    assert same_metrics(a, b)
    assert not same_metrics(a, c)


def test_no_infection_ever():
    model = SbmParams(1000, 50, 0.012, 0.0004, 0.0, 0.1)
    m = run_trajectory(model, Dorfman(), 10, seed=0)
    assert np.all(m.cum_infected == 0)
    # one pool of 50 per community every day, nothing more
    assert np.all(m.tests_registered == 20)
    assert m.trailing_tests == 0


@pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.variant)
def test_conservation_and_bounds(policy):
    m = run_trajectory(SBM, Dorfman(policy), 50, seed=3)
    active = m.population_size - m.isolated - m.quarantined
    assert np.all(active >= 0)
    assert np.all(m.isolated + m.quarantined + active == m.population_size)
    assert np.all(np.diff(m.cum_infected) >= 0)
    assert np.all(m.tests_registered >= 0)
    assert np.all(m.pipeline_size <= m.population_size)
    if policy.variant == "none":
        assert not m.quarantined.any()


@pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.variant)
def test_dorfman_zero_error(policy):
    for seed in range(10):
        m = run_trajectory(SBM, Dorfman(policy), 50, seed=seed)
        assert m.false_isolations == 0
        assert m.late_detections == 0


def test_realized_quarantine_cost_only_for_cost_aware():
    none = run_trajectory(SBM, Dorfman(POLICIES[1]), 30, seed=1)
    aware = run_trajectory(SBM, Dorfman(POLICIES[2]), 30, seed=1)
    assert np.all(none.quarantine_cost_realized == 0)
    assert np.all(aware.quarantine_cost_realized[aware.quarantined_uninfected == 0] == 0)
    assert np.all(
        aware.quarantine_cost_realized[aware.quarantined_uninfected > 0] >= 1.5
    )


def test_iid_first_day_pipeline_is_everyone():
    m = run_trajectory(IidParams(1000, 0.12), Dorfman(), 20, seed=0)
    assert m.pipeline_size[0] == 1000
    assert m.trailing_tests > 0


def test_single_trajectory_batch():
    summary, trajs = run_batch(SBM, Dorfman(), 20, 1, base_seed=5)
    (m,) = trajs
    assert m.seed == 5
    assert summary.n_traj == 1
    assert summary.mean_final_infected_frac == m.final_infected_frac
    assert summary.q10 == summary.q50 == summary.q90 == m.final_infected_frac
    assert summary.mean_total_tests == m.total_tests
    assert summary.mean_quarantine_person_days == m.quarantine_person_days
    assert summary.explosion_frac == float(detect_explosion(m))


def test_batch_seeds_and_order_independence():
    summary, trajs = run_batch(SBM, Dorfman(), 15, 6, base_seed=100)
    assert [m.seed for m in trajs] == list(range(100, 106))
    shuffled = summarize(trajs[::-1], 100)
    assert shuffled == summary
    again = summarize([trajs[i] for i in (3, 0, 5, 1, 4, 2)], 100)
    assert again.to_dict() == summary.to_dict()


def test_batch_matches_individual_runs():
    _, trajs = run_batch(SBM, Cca(), 10, 3, base_seed=7)
    for m in trajs:
        assert same_metrics(m, run_trajectory(SBM, Cca(), 10, m.seed))


def test_parallel_batch_identical():
    serial, _ = run_batch(SBM, Dorfman(), 10, 4, base_seed=0)
    parallel, _ = run_batch(SBM, Dorfman(), 10, 4, base_seed=0, n_jobs=2)
    assert serial == parallel


class TestDetectExplosion:
    def test_all_susceptible(self):
        model = SbmParams(1000, 50, 0.012, 0.0004, 0.0)
        assert not detect_explosion(run_trajectory(model, Dorfman(), 5, 0))

    def test_threshold(self):
        m = run_trajectory(SBM, Dorfman(), 5, 0)
        m.cum_infected[-1] = 710
        assert detect_explosion(m, 0.5)
        assert not detect_explosion(m, 0.8)


def test_summary_quantiles_ordered():
    summary, _ = run_batch(SBM, Cca(), 15, 8)
    assert summary.q10 <= summary.q50 <= summary.q90
    assert 0 <= summary.explosion_frac <= 1


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        run_trajectory(SBM, Dorfman(), 0, 0)
    with pytest.raises(ValueError):
        run_batch(SBM, Dorfman(), 5, 0)
    with pytest.raises(TypeError):
        run_trajectory("sbm", Dorfman(), 5, 0)
    with pytest.raises(ValueError):
        Dorfman(sizing="weekly")


def test_rows_have_stable_columns():
    from dyngt.engine import DAY_COLUMNS

    rows = run_trajectory(SBM, Dorfman(), 3, 0).rows()
    assert len(rows) == 3
    assert tuple(rows[0]) == DAY_COLUMNS
