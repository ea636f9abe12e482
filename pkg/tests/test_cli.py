import json
import math

import pytest

from conftest import md1_setup, two_stage_setup

from cascade_planner.cli import EXIT_CODES, main
from cascade_planner.config import PlannerConfig, load_config
from cascade_planner.domain import CascadePlan, TraceRecord, dump_json, read_trace, validate_plan, write_trace
from cascade_planner.drift import DriftPolicy
from cascade_planner.outerplan import SweepGrid


def write_config(path, hw, models, params, **extra):
    cfg = PlannerConfig(hw, tuple(models), params, **extra)
    dump_json(path, cfg.to_dict())
    return path


@pytest.fixture(scope="module")
def planned(tmp_path_factory):
    """A small two-stage plan produced through the CLI."""
    d = tmp_path_factory.mktemp("plan")
    trace, models, hw, params = two_stage_setup()
    write_trace(d / "trace.jsonl", trace)
    write_config(d / "config.json", hw, models, params)
    code = main(["plan", "--config", str(d / "config.json"), "--trace", str(d / "trace.jsonl"),
                 "--min-quality", "75", "--seed", "0", "--out-dir", str(d / "out")])
    assert code == 0
    return d


def test_plan_outputs(planned):
    cfg = load_config(planned / "config.json")
    plan = CascadePlan.from_dict(json.loads((planned / "out" / "plan.json").read_text()))
    assert validate_plan(plan, cfg.hardware, cfg.models) == []
    assert plan.predicted_quality >= 75
    for name in ("front.json", "front.csv", "sweep.json", "baseline_stats.json"):
        assert (planned / "out" / name).exists()
    base = json.loads((planned / "out" / "baseline_stats.json").read_text())
    assert base["h1"] == plan.thresholds.thresholds[0]


def test_unreachable_quality(planned, tmp_path, capsys):
    code = main(["plan", "--config", str(planned / "config.json"),
                 "--trace", str(planned / "trace.jsonl"), "--min-quality", "100",
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_CODES["NO_FEASIBLE_POINT"]
    assert json.loads(capsys.readouterr().err)["error"] == "NO_FEASIBLE_POINT"


def test_simulate_accepts_planned_output(planned, tmp_path):
    code = main(["simulate", "--plan", str(planned / "out" / "plan.json"),
                 "--config", str(planned / "config.json"), "--trace", str(planned / "trace.jsonl"),
                 "--scales", "1,2,5,10", "--out-dir", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert len(rep["per_request"]) == 400
    assert [s for s, _ in rep["attainment"]] == [1, 2, 5, 10]
    assert (tmp_path / "attainment.csv").read_text().startswith("scale,fraction\n")


def test_simulate_md1_via_files(tmp_path):
    plan, trace, models, hw, params = md1_setup()
    write_trace(tmp_path / "t.jsonl", trace)
    write_config(tmp_path / "c.json", hw, models, params)
    dump_json(tmp_path / "p.json", plan.to_dict())
    assert main(["simulate", "--plan", str(tmp_path / "p.json"), "--config", str(tmp_path / "c.json"),
                 "--trace", str(tmp_path / "t.jsonl"), "--warmup", "0",
                 "--out-dir", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    mean_wait = math.fsum(r["wait_s"] for r in rep["per_request"]) / len(rep["per_request"])
    assert mean_wait == pytest.approx(0.0125, rel=0.1)
    assert rep["stage_utilization"][0] == pytest.approx(0.2, rel=0.05)


def test_simulate_rejects_invalid_plan(planned, tmp_path, capsys):
    plan = json.loads((planned / "out" / "plan.json").read_text())
    plan["allocations"][0] += 1
    dump_json(tmp_path / "bad.json", plan)
    code = main(["simulate", "--plan", str(tmp_path / "bad.json"),
                 "--config", str(planned / "config.json"), "--trace", str(planned / "trace.jsonl"),
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_CODES["INVALID_PLAN"]
    (tmp_path / "junk.json").write_text("{")
    assert main(["simulate", "--plan", str(tmp_path / "junk.json"),
                 "--config", str(planned / "config.json"), "--trace", str(planned / "trace.jsonl"),
                 "--out-dir", str(tmp_path)]) == EXIT_CODES["INVALID_PLAN"]


def test_compare(planned, tmp_path, capsys):
    p = str(planned / "out" / "plan.json")
    assert main(["compare", "--plans", p, p, "--config", str(planned / "config.json"),
                 "--trace", str(planned / "trace.jsonl"), "--out-dir", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "comparison.json").read_text())["rows"]
    assert rows[0]["p95_s"] == rows[1]["p95_s"]


def test_bad_input(tmp_path, capsys):
    assert main(["plan", "--config", str(tmp_path / "missing.json"), "--trace", "x",
                 "--out-dir", str(tmp_path)]) == EXIT_CODES["BAD_INPUT"]
    assert json.loads(capsys.readouterr().err)["error"] == "BAD_INPUT"
    write_trace(tmp_path / "empty.jsonl", [])
    trace, models, hw, params = two_stage_setup(n=10)
    write_config(tmp_path / "c.json", hw, models, params)
    assert main(["plan", "--config", str(tmp_path / "c.json"), "--trace",
                 str(tmp_path / "empty.jsonl"), "--out-dir", str(tmp_path)]) == EXIT_CODES["EMPTY_TRACE"]


# drift -----------------------------------------------------------------------

def shifted(trace, rate_factor=1.0, output_factor=1.0):
    t0 = trace[0].arrival_s
    out = []
    for r in trace:
        stages = tuple(type(s)(round(s.output_tokens * output_factor), s.score) for s in r.per_stage)
        out.append(TraceRecord(t0 + (r.arrival_s - t0) / rate_factor, r.input_tokens, stages))
    return out


def drift(tmp_path, base_dir, stream, *extra):
    write_trace(tmp_path / "stream.jsonl", stream)
    code = main(["drift", "--baseline", str(base_dir / "out" / "baseline_stats.json"),
                 "--trace", str(tmp_path / "stream.jsonl"), "--window-interval", "100000",
                 "--window-requests", "400", "--out-dir", str(tmp_path / "d"), *extra])
    assert code == 0
    return json.loads((tmp_path / "d" / "drift.json").read_text())


def test_identical_stream_has_no_drift(planned, tmp_path):
    trace = read_trace(planned / "trace.jsonl")
    rep = drift(tmp_path, planned, trace)
    assert not rep["drift_detected"] and rep["first_drift_window"] is None
    assert rep["windows"][0]["deviations"]["arrival_rate"] == 0.0


def test_doubled_rate_is_flagged(planned, tmp_path):
    rep = drift(tmp_path, planned, shifted(read_trace(planned / "trace.jsonl"), rate_factor=2.0))
    assert rep["drift_detected"]
    assert rep["windows"][0]["drifted"] == ["arrival_rate"]


def test_halved_rate_is_flagged_too(planned, tmp_path):
    rep = drift(tmp_path, planned, shifted(read_trace(planned / "trace.jsonl"), rate_factor=0.5))
    assert rep["windows"][0]["drifted"] == ["arrival_rate"]


def test_boundary_shift_not_flagged(tmp_path):
    from conftest import make_trace
    base = make_trace([(50, 50)] * 10, outputs=[[100, 100]] * 10)
    (tmp_path / "out").mkdir()
    dump_json(tmp_path / "out" / "baseline_stats.json",
              {"h1": 60.0, "stats": {"arrival_rate": 1.0, "mean_input_tokens": 200.0,
                                     "mean_output_tokens": 100.0, "stage1_accept_rate": 0.0}})
    at_edge = make_trace([(50, 50)] * 10, outputs=[[120, 100]] * 10)
    assert not drift(tmp_path, tmp_path, at_edge)["drift_detected"]
    past = make_trace([(50, 50)] * 10, outputs=[[121, 100]] * 10)
    rep = drift(tmp_path, tmp_path, past)
    assert rep["windows"][0]["drifted"] == ["mean_output_tokens"]
    assert not drift(tmp_path, tmp_path, base)["drift_detected"]


def test_windows_follow_policy(planned, tmp_path):
    trace = read_trace(planned / "trace.jsonl")
    write_trace(tmp_path / "s.jsonl", trace)
    main(["drift", "--baseline", str(planned / "out" / "baseline_stats.json"),
          "--trace", str(tmp_path / "s.jsonl"), "--out-dir", str(tmp_path)])
    rep = json.loads((tmp_path / "drift.json").read_text())
    span = trace[-1].arrival_s - trace[0].arrival_s
    assert len(rep["windows"]) == math.floor(span / 600) + 1
    assert all(w["sampled"] <= 100 for w in rep["windows"])


def test_replan_on_drift(planned, tmp_path):
    stream = shifted(read_trace(planned / "trace.jsonl"), rate_factor=0.5)
    rep = drift(tmp_path, planned, stream, "--replan", "--config", str(planned / "config.json"),
                "--min-quality", "75")
    assert rep["replan"]["requests"] == 400
    cfg = load_config(planned / "config.json")
    plan = CascadePlan.from_dict(json.loads((tmp_path / "d" / "replan" / "plan.json").read_text()))
    assert validate_plan(plan, cfg.hardware, cfg.models) == []


def test_malformed_stream(planned, tmp_path):
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    code = main(["drift", "--baseline", str(planned / "out" / "baseline_stats.json"),
                 "--trace", str(tmp_path / "bad.jsonl"), "--out-dir", str(tmp_path)])
    assert code == EXIT_CODES["MALFORMED_STREAM"]


# gen-trace -------------------------------------------------------------------

def gen(path, *extra):
    return main(["gen-trace", "--rate", "2.5", "--output-means", "64,128",
                 "--score-means", "70,85", "--score-stds", "10,5", "--out", str(path), *extra])


def test_gen_trace_empty(tmp_path):
    assert gen(tmp_path / "t.jsonl", "--count", "0") == 0
    assert (tmp_path / "t.jsonl").read_bytes() == b""


def test_gen_trace_reproducible(tmp_path):
    gen(tmp_path / "a.jsonl", "--count", "500", "--seed", "3")
    gen(tmp_path / "b.jsonl", "--count", "500", "--seed", "3")
    gen(tmp_path / "c.jsonl", "--count", "500", "--seed", "4")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()
    trace = read_trace(tmp_path / "a.jsonl", 2)
    assert all(0 <= s.score <= 100 for r in trace for s in r.per_stage)


def test_gen_trace_rate(tmp_path):
    gen(tmp_path / "t.jsonl", "--count", "10000", "--seed", "0")
    trace = read_trace(tmp_path / "t.jsonl")
    rate = len(trace) / trace[-1].arrival_s
    assert rate == pytest.approx(2.5, rel=0.03)


def test_gen_trace_bad_spec(tmp_path):
    assert gen(tmp_path / "t.jsonl", "--count", "5", "--score-corr", "3") == EXIT_CODES["BAD_INPUT"]
    assert main(["gen-trace", "--count", "5", "--out", str(tmp_path / "x")]) == EXIT_CODES["BAD_INPUT"]
