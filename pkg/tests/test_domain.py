import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_planner.domain import (FORWARD_ALL, CascadePlan, HardwareSpec, ModelSpec,
                                    ObjectivePoint, ParallelismPlan, ReplicaShape,
                                    RoutingThresholds, StageResult, TraceRecord, WorkloadStats,
                                    canonicalize, check_cascade, read_trace, validate_plan,
                                    write_trace)

R = ReplicaShape


def three_stage_plan(alloc=(4, 8, 20)):
    plans = (ParallelismPlan((R(1, 1),) * 4),
             ParallelismPlan((R(4, 1), R(4, 1))),
             ParallelismPlan((R(4, 3), R(8, 1))))
    return CascadePlan(alloc, plans, RoutingThresholds((99, 91)), 1.0, 90.0, (1.0, 0.94, 0.5))


def test_three_stage_allocation_validates(hw32, models3):
    assert validate_plan(three_stage_plan(), hw32, models3) == []


def test_budget_shortfall_reported(hw32, models3):
    report = validate_plan(three_stage_plan((4, 8, 19)), hw32, models3)
    assert any(msg.startswith("budget") for msg in report)


def test_dropped_stage_must_agree_everywhere(hw32, models3):
    base = three_stage_plan()
    plan = CascadePlan((12, 20, 0), (base.plans[0], base.plans[1], None), base.thresholds,
                       1.0, 80.0, (1.0, 0.23, 0.0))
    assert validate_plan(plan, hw32, models3) == []
    bad = CascadePlan((12, 20, 0), (base.plans[0], base.plans[1], None), base.thresholds,
                      1.0, 80.0, (1.0, 0.23, 0.1))
    assert any("disagree" in m for m in validate_plan(bad, hw32, models3))


def test_memory_and_monotonicity_violations(hw32, models3):
    plans = (ParallelismPlan((R(1, 1),) * 4), ParallelismPlan((R(4, 1), R(4, 1))),
             ParallelismPlan((R(1, 1),) * 20))
    plan = CascadePlan((4, 8, 20), plans, RoutingThresholds((99, 91)), 1.0, 90.0, (1.0, 0.5, 0.9))
    report = validate_plan(plan, hw32, models3)
    assert any("cannot hold" in m for m in report)
    assert any(m.startswith("ratios") for m in report)


def test_canonicalize_examples():
    assert canonicalize(ParallelismPlan((R(2, 1), R(4, 1)))).replicas == (R(4, 1), R(2, 1))
    # same GPU count: larger tp first
    assert canonicalize(ParallelismPlan((R(1, 2), R(2, 1)))).replicas == (R(2, 1), R(1, 2))
    p = ParallelismPlan((R(4, 1), R(2, 1)))
    assert canonicalize(p) == p and canonicalize(canonicalize(p)) == canonicalize(p)


shapes = st.builds(R, st.integers(1, 8), st.integers(1, 8))


@given(st.lists(shapes, min_size=1, max_size=8), st.randoms())
def test_canonical_form_is_permutation_invariant(reps, rnd):
    shuffled = list(reps)
    rnd.shuffle(shuffled)
    a, b = ParallelismPlan(tuple(reps)), ParallelismPlan(tuple(shuffled))
    assert a == b
    assert canonicalize(a) == canonicalize(canonicalize(b))
    assert a.gpus_used == sum(r.tp * r.pp for r in reps)


def test_check_cascade_rejects_shrinking_models():
    with pytest.raises(ValueError):
        check_cascade([ModelSpec("a", 70e9, 2, 1, 1), ModelSpec("b", 7e9, 2, 1, 2)])
    with pytest.raises(ValueError):
        check_cascade([ModelSpec("a", 7e9, 2, 1, 2)])


def test_invalid_values_rejected():
    with pytest.raises(ValueError):
        WorkloadStats(1.0, 100, 100, 50, 100)
    with pytest.raises(ValueError):
        RoutingThresholds((FORWARD_ALL + 1,))
    with pytest.raises(ValueError):
        TraceRecord(0.0, 10, (StageResult(1, 101.0),))


# round trips ---------------------------------------------------------------

pos = st.floats(1e-3, 1e15, allow_nan=False)
scores = st.floats(0, 100, allow_nan=False)
hardware = st.builds(HardwareSpec, st.integers(1, 512), pos, pos, pos, pos, pos, st.integers(1, 16))
model = st.builds(ModelSpec, st.text(max_size=8), st.floats(0, 1e12), st.floats(0.125, 4),
                  st.floats(0, 1e6), st.integers(1, 5), st.integers(1, 64))


@st.composite
def workloads(draw):
    mi, mo = draw(st.floats(0, 1e4)), draw(st.floats(0, 1e4))
    return WorkloadStats(draw(st.floats(0, 1e3)), mi, mo, mi + draw(st.floats(0, 1e4)),
                         mo + draw(st.floats(0, 1e4)))


plans = st.builds(lambda reps: ParallelismPlan(tuple(reps)), st.lists(shapes, min_size=1, max_size=6))
thresholds = st.builds(lambda hs: RoutingThresholds(tuple(hs)),
                       st.lists(st.floats(0, FORWARD_ALL), max_size=3))
records = st.builds(TraceRecord, st.floats(0, 1e6), st.integers(0, 10000),
                    st.lists(st.builds(StageResult, st.integers(0, 5000), scores),
                             min_size=1, max_size=3).map(tuple))


@st.composite
def cascade_plans(draw):
    C = draw(st.integers(1, 3))
    ps = draw(st.lists(st.one_of(st.none(), plans), min_size=C, max_size=C))
    return CascadePlan(tuple(draw(st.lists(st.integers(0, 64), min_size=C, max_size=C))),
                       tuple(ps),
                       RoutingThresholds(tuple(draw(st.lists(st.floats(0, 100), min_size=C - 1,
                                                             max_size=C - 1)))),
                       draw(st.floats(0, 1e4)), draw(scores),
                       tuple(draw(st.lists(st.floats(0, 1), min_size=C, max_size=C))))


points = st.builds(ObjectivePoint, st.floats(0, 1e4), scores, thresholds,
                   st.one_of(st.none(), cascade_plans()))


@pytest.mark.parametrize("strategy,cls", [
    (hardware, HardwareSpec), (model, ModelSpec), (workloads(), WorkloadStats),
    (shapes, ReplicaShape), (plans, ParallelismPlan), (thresholds, RoutingThresholds),
    (records, TraceRecord), (cascade_plans(), CascadePlan), (points, ObjectivePoint),
])
def test_json_round_trip(strategy, cls):
    @settings(max_examples=1000)
    @given(strategy)
    def check(x):
        assert cls.from_dict(json.loads(json.dumps(x.to_dict()))) == x

    check()


def test_trace_jsonl_round_trip(tmp_path):
    trace = [TraceRecord(0.5 * k, 10 + k, (StageResult(k, 50.0 + k), StageResult(2 * k, 90.5)))
             for k in range(5)]
    write_trace(tmp_path / "t.jsonl", trace)
    assert read_trace(tmp_path / "t.jsonl", 2) == trace
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert set(json.loads(lines[0])) == {"arrival_s", "input_tokens", "per_stage"}


def test_trace_arrivals_must_not_decrease(tmp_path):
    trace = [TraceRecord(1.0, 1, (StageResult(1, 1.0),)), TraceRecord(0.5, 1, (StageResult(1, 1.0),))]
    write_trace(tmp_path / "t.jsonl", trace)
    with pytest.raises(ValueError):
        read_trace(tmp_path / "t.jsonl")


def test_describe_uses_dp_tp_pp_notation():
    assert three_stage_plan().plans[1].describe() == "(DP=2, TP=4)"
    assert three_stage_plan().plans[2].describe() == "(TP=4, PP=3), (TP=8)"
    assert list(itertools.islice(three_stage_plan().plans[0].replicas, 1)) == [R(1, 1)]
