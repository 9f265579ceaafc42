import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sortline_rm.engine import EventQueue, Trace
from sortline_rm.errors import ScenarioError, UsageError
from sortline_rm.fault_inject import (
    COLOR_MISREAD,
    LN2_Q32,
    FaultSpec,
    SplitMix64,
    apply_faults,
    exp_interarrival,
    fault_state,
    generate_arrivals,
    log2_q32,
)
from sortline_rm.plant_sim import LineGeometry, Plant, default_components
from sortline_rm.scenario import loads_scenario, scenario_from_dict

GOLDEN = Path(__file__).parent / "golden"


def plant():
    return Plant(LineGeometry(), default_components(), EventQueue(), Trace())


# -- fault specs --------------------------------------------------------------

def test_permanent_cp_fault_adds_latency():
    p = plant()
    faults = [FaultSpec("CP", magnitude=50_000, onset=2_000_000)]
    assert apply_faults(faults, p, 1_999_999) == []
    assert p.components["CP"].effective_latency == 25_000
    active = set()
    recs = apply_faults(faults, p, 2_000_000, active)
    assert [r["kind"] for r in recs] == ["fault_on"]
    assert p.components["CP"].effective_latency == 25_000 + 50_000
    assert active == {0}


def test_fault_ends_after_duration():
    f = FaultSpec("BS", magnitude=5_000, onset=100, duration=50)
    assert [f.active_at(t) for t in (99, 100, 149, 150)] == [False, True, True, False]
    assert f.transitions(1_000) == [100, 150]
    p, active = plant(), set()
    apply_faults([f], p, 100, active)
    recs = apply_faults([f], p, 150, active)
    assert [r["kind"] for r in recs] == ["fault_off"]
    assert p.components["BS"].fault_delay == 0


def test_intermittent_duty_half():
    f = FaultSpec("EC", magnitude=1, onset=0, period=200_000, duty_num=1, duty_den=2)
    assert f.active_at(0) and f.active_at(99_999)
    assert not f.active_at(100_000) and not f.active_at(199_999)
    assert f.active_at(200_000)
    assert f.transitions(450_000) == [0, 100_000, 200_000, 300_000, 400_000]


def test_concurrent_latency_faults_add():
    faults = [FaultSpec("CP", magnitude=10_000), FaultSpec("CP", magnitude=5_000, onset=10),
              FaultSpec("BS", magnitude=99)]
    assert fault_state(faults, "CP", 5) == (10_000, None)
    assert fault_state(faults, "CP", 10) == (15_000, None)


def test_misread_fault_state():
    faults = [FaultSpec("CP", COLOR_MISREAD, wrong_color="blue", onset=3)]
    assert fault_state(faults, "CP", 2) == (0, None)
    assert fault_state(faults, "CP", 3) == (0, "blue")


@pytest.mark.parametrize("kwargs", [
    dict(kind="melt"),
    dict(magnitude=-1),
    dict(onset=-5),
    dict(duration=-1),
    dict(kind=COLOR_MISREAD, wrong_color="green"),
    dict(period=0),
    dict(period=10, duty_num=3, duty_den=2),
])
def test_fault_spec_validation(kwargs):
    with pytest.raises(UsageError):
        FaultSpec("CP", **kwargs)


@settings(max_examples=200, deadline=None)
@given(onset=st.integers(0, 1_000), duration=st.none() | st.integers(0, 1_000),
       period=st.none() | st.integers(1, 300), duty=st.integers(1, 4))
def test_activity_only_changes_at_transitions(onset, duration, period, duty):
    f = FaultSpec("CP", magnitude=1, onset=onset, duration=duration, period=period,
                  duty_num=duty, duty_den=4)
    horizon = 2_500
    marks = set(f.transitions(horizon))
    prev = f.active_at(0)
    for t in range(1, horizon + 1):
        cur = f.active_at(t)
        if cur != prev:
            assert t in marks
        prev = cur


# -- arrival generator ------------------------------------------------------

def test_splitmix_reference_stream():
    rng = SplitMix64(0)
    assert [rng.next() for _ in range(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_ln2_constant():
    assert LN2_Q32 == round(math.log(2) * 2**32)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 1_000, 2**31 + 7, 2**32, 3_185_914_407])
def test_log2_q32_close_to_float(k):
    assert abs(log2_q32(k) / 2**32 - math.log2(k)) < 1e-8


def test_log2_q32_exact_powers():
    assert log2_q32(1) == 0
    assert log2_q32(1 << 20) == 20 << 32


def test_log2_q32_rejects_zero():
    with pytest.raises(UsageError):
        log2_q32(0)


@settings(max_examples=300, deadline=None)
@given(u=st.integers(0, 2**32 - 1), mean=st.integers(1, 10_000_000))
def test_exp_interarrival_matches_float_inverse_cdf(u, mean):
    expected = -mean * math.log((u + 1) / 2**32)
    got = exp_interarrival(u, mean)
    assert got >= 1
    assert abs(got - max(1, expected)) <= 2 + expected * 1e-7


def test_generate_arrivals_golden():
    doc = json.loads((GOLDEN / "arrivals_seed42.json").read_text())
    got = generate_arrivals(doc["seed"], doc["mean_interarrival"], doc["duration"])
    assert [list(a) for a in got] == doc["arrivals"]


def test_generate_arrivals_empty_duration():
    assert generate_arrivals(42, 500_000, 0) == []


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), mean=st.integers(5_000, 1_000_000))
def test_generate_arrivals_deterministic_and_increasing(seed, mean):
    a = generate_arrivals(seed, mean, 3_000_000)
    assert a == generate_arrivals(seed, mean, 3_000_000)
    times = [t for t, _ in a]
    assert times == sorted(set(times))
    assert all(0 < t < 3_000_000 for t in times)


def test_generate_arrivals_mean_rate():
    a = generate_arrivals(7, 10_000, 100_000_000)
    assert len(a) == pytest.approx(10_000, rel=0.05)
    colours = [c for _, c in a]
    for c in ("white", "red", "blue"):
        assert colours.count(c) == pytest.approx(len(a) / 3, rel=0.1)


# -- scenario validation ----------------------------------------------------

@pytest.mark.parametrize("doc,path", [
    ({}, "duration"),
    ({"duration": -1}, "duration"),
    ({"duration": 1, "faults": [{"target": "XX"}]}, "faults[0].target"),
    ({"duration": 1, "faults": [{"target": "PC", "kind": "color_misread",
                                 "wrong_color": "red"}]}, "faults[0].target"),
    ({"duration": 1, "faults": [{"target": "CP", "kind": "color_misread",
                                 "wrong_color": "green"}]}, "faults[0]"),
    ({"duration": 1, "faults": [{"target": "CP", "pattern": {"type": "intermittent"}}]},
     "faults[0].pattern.period"),
    ({"duration": 1, "arrivals": {"explicit": [[5, "red"], [5, "red"]]}}, "arrivals.explicit[1]"),
    ({"duration": 1, "arrivals": {"explicit": [[0, "green"]]}}, "arrivals.explicit[0]"),
    ({"duration": 1, "contracts": {"CP": {"budget": 70_000}}}, "contracts"),
    ({"duration": 1, "geometry": {"ejector_pulses": [21, 28, 32],
                                  "actuation_margin": 40_000}}, "geometry"),
    ({"duration": 1, "bogus": 3}, "bogus"),
    ({"duration": 1, "seed": 2**64}, "seed"),
])
def test_scenario_errors_name_the_field(doc, path):
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(doc)
    assert info.value.path == path


def test_json_syntax_error_reports_position():
    with pytest.raises(ScenarioError) as info:
        loads_scenario('{"duration": 1,\n  oops}')
    assert str(info.value).startswith("line 2 column 3")


def test_intermittent_fault_from_scenario():
    sc = scenario_from_dict({"duration": 1, "faults": [
        {"target": "CP", "magnitude": 10, "pattern": {"type": "intermittent", "period": 200_000,
                                                       "duty": [1, 2]}}]})
    f = sc.faults[0]
    assert (f.period, f.duty_num, f.duty_den, f.on_time) == (200_000, 1, 2, 100_000)
