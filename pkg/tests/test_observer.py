import copy
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sortline_rm.contract_core import LatencyContract, Measurement, Satisfied, evaluate
from sortline_rm.errors import UsageError
from sortline_rm.observer import ASSUMPTION, GUARANTEE, Observer, ObserverConfig


def pc(budget=10_000):
    return LatencyContract("PC", "PC", budget=budget)


def feed(obs, contract, responses):
    out = None
    for i, r in enumerate(responses):
        out = obs.record(contract, 100 * i, 100 * i + r, True, i)
    return out


def test_record_reports_max_over_window():
    obs = Observer("PC")
    feed(obs, pc(), [8_000])
    rep = obs.record(pc(), 0, 15_000)
    assert (rep.observed, rep.demand, rep.kind) == (15_000, 15_000, GUARANTEE)


def test_record_satisfied_sample_is_silent():
    assert Observer("PC").record(pc(), 0, 9_000) is None


def test_record_safety_factor():
    obs = Observer("PC", ObserverConfig(window=5, safety_factor_num=5, safety_factor_den=4))
    feed(obs, pc(), [15_000])
    rep = obs.record(pc(), 0, 12_000)
    assert (rep.observed, rep.demand) == (12_000, 18_750)


def test_assumption_report_carries_budget_as_demand():
    rep = Observer("PC").record(pc(), 0, 50_000, assumption_held=False)
    assert rep.kind == ASSUMPTION and rep.demand == 10_000


@pytest.mark.parametrize("window,cfg,expected", [
    ([8_000, 15_000, 12_000], (1, 1), 15_000),
    ([10_000], (1, 1), 10_000),
    ([8_000, 9_000], (3, 2), 13_500),
])
def test_demand_estimate(window, cfg, expected):
    obs = Observer("X", ObserverConfig(5, *cfg))
    obs.window.extend(window)
    assert obs.demand_estimate() == expected


def test_demand_estimate_empty_window():
    with pytest.raises(UsageError):
        Observer("X").demand_estimate()


def test_window_evicts_oldest():
    obs = Observer("X", ObserverConfig(window=2))
    feed(obs, pc(100_000), [50, 10, 20])
    assert list(obs.window) == [10, 20]


def test_config_validation():
    with pytest.raises(UsageError):
        ObserverConfig(window=0)
    with pytest.raises(UsageError):
        ObserverConfig(safety_factor_num=1, safety_factor_den=2)


@given(st.lists(st.tuples(st.integers(0, 30_000), st.booleans()), min_size=1, max_size=60))
def test_reports_iff_reference_evaluation_fails(samples):
    """Replay a stream against a fresh reference evaluation."""
    contract = pc()
    obs = Observer("PC", ObserverConfig(window=3))
    for i, (resp, held) in enumerate(samples):
        rep = obs.record(contract, 7 * i, 7 * i + resp, held, i)
        ref = evaluate(contract, Measurement("PC", i, 7 * i, 7 * i + resp, held))
        assert (rep is None) == isinstance(ref, Satisfied)


@given(st.lists(st.integers(0, 100_000), min_size=1, max_size=8),
       st.integers(0, 7), st.integers(0, 50_000), st.randoms())
def test_demand_monotone_and_permutation_invariant(window, idx, bump, rnd):
    obs = Observer("X", ObserverConfig(window=8, safety_factor_num=7, safety_factor_den=5))
    obs.window.extend(window)
    base = obs.demand_estimate()
    shuffled = list(window)
    rnd.shuffle(shuffled)
    obs.window.clear()
    obs.window.extend(shuffled)
    assert obs.demand_estimate() == base
    bumped = list(window)
    bumped[idx % len(bumped)] += bump
    obs.window.clear()
    obs.window.extend(bumped)
    assert obs.demand_estimate() >= base


def test_observer_never_mutates_contract():
    contract = pc()
    before = copy.deepcopy(contract)
    obs = Observer("PC")
    rng = random.Random(3)
    for i in range(200):
        obs.record(contract, i, i + rng.randrange(0, 30_000), rng.random() < 0.9, i)
    assert contract == before
