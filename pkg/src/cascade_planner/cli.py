"""``cascade-planner`` command line: plan, simulate, drift, gen-trace, compare.

Every command reads and writes plain files, so the pipeline is
plan -> simulate -> drift (optionally re-planning) with nothing long-running.
Failures exit nonzero and print ``{"error": CODE, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import PlannerConfig, load_config
from .domain import CascadePlan, PlannerError, TraceRecord, dump_json, read_trace, validate_plan, write_trace
from .drift import DriftPolicy, detect, windows, workload_snapshot
from .outerplan import (SweepResult, WeightPair, argmin_tchebycheff, select_point, sweep,
                        write_front)
from .simulator import DEFAULT_SCALES, SimConfig, compare, run, write_report
from .tracegen import TraceSpec, generate_trace

log = logging.getLogger("cascade_planner")

EXIT_CODES = {
    "BAD_INPUT": 2,
    "INFEASIBLE_PROBLEM": 3,
    "NO_FEASIBLE_POINT": 4,
    "INVALID_PLAN": 5,
    "EMPTY_TRACE": 6,
    "NO_DEPLOYED_STAGE": 7,
    "MALFORMED_STREAM": 8,
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _load_trace(path, n_stages: Optional[int] = None, code: str = "BAD_INPUT") -> list[TraceRecord]:
    try:
        return read_trace(path, n_stages)
    except (OSError, ValueError) as exc:
        raise PlannerError(code, str(exc)) from exc


def _load_plan(path) -> CascadePlan:
    try:
        with open(path, encoding="utf-8") as fh:
            return CascadePlan.from_dict(json.load(fh))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise PlannerError("INVALID_PLAN", f"{path}: {exc}") from exc


def plan_pipeline(cfg: PlannerConfig, trace: Sequence[TraceRecord], out_dir: str | Path,
                  min_quality: Optional[float] = None,
                  max_latency: Optional[float] = None) -> tuple[CascadePlan, SweepResult]:
    """Sweep, select, and write plan.json / front.json / front.csv /
    sweep.json / baseline_stats.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = sweep(trace, cfg.models, cfg.hardware, cfg.cost_model, grid=cfg.sweep)
    if min_quality is None and max_latency is None:
        point = argmin_tchebycheff(result.front.points, result.utopia, WeightPair(0.5, 0.5))
    else:
        point = select_point(result.front, min_quality, max_latency)
    plan = point.plan_ref
    problems = validate_plan(plan, cfg.hardware, cfg.models)
    if problems:  # would be a planner bug
        raise PlannerError("INVALID_PLAN", "; ".join(problems))

    dump_json(out / "plan.json", plan.to_dict())
    write_front(result.front, out / "front.json", out / "front.csv")
    dump_json(out / "sweep.json", result.to_dict())
    h1 = plan.thresholds.thresholds[0] if len(plan.thresholds) else None
    dump_json(out / "baseline_stats.json",
              {"h1": h1, "stats": workload_snapshot(trace, h1)})
    return plan, result


def cmd_plan(args) -> int:
    cfg = load_config(args.config).with_seed(args.seed)
    trace = _load_trace(args.trace, len(cfg.models))
    plan, result = plan_pipeline(cfg, trace, args.out_dir, args.min_quality, args.max_latency)
    log.info("front has %d points from %d candidates; selected allocations %s, L=%.4g s, Q=%.2f",
             len(result.front), len(result.evaluations), list(plan.allocations),
             plan.predicted_max_p95_s, plan.predicted_quality)
    return 0


def _sim_config(args) -> SimConfig:
    return SimConfig(seed=args.seed if args.seed is not None else 0,
                     slo_base_s=args.slo_base,
                     slo_scales=_floats(args.scales) if args.scales else DEFAULT_SCALES,
                     warmup_fraction=args.warmup)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    plan = _load_plan(args.plan)
    trace = _load_trace(args.trace, len(cfg.models))
    report = run(plan, trace, cfg.models, cfg.hardware, cfg.cost_model, _sim_config(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.json", out / "attainment.csv")
    if report.unstable:
        log.warning("UNSTABLE: queues keep growing at stage(s) %s", report.unstable_stages)
    log.info("p95 %.4g s, throughput %.4g req/s, min SLO scale for 95%%: %s",
             report.p95_s, report.throughput_rps, report.min_scale_95)
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    plans = [_load_plan(p) for p in args.plans]
    trace = _load_trace(args.trace, len(cfg.models))
    rows = compare(plans, trace, cfg.models, cfg.hardware, cfg.cost_model, _sim_config(args),
                   names=[Path(p).stem for p in args.plans])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "comparison.json", {"rows": [r.to_dict() for r in rows]})
    for r in rows:
        print(f"{r.name}\tp95={r.p95_s:.4g}s\tthroughput={r.throughput_rps:.4g}/s\t"
              f"min_scale_95={r.min_scale_95}")
    return 0


def cmd_drift(args) -> int:
    with open(args.baseline, encoding="utf-8") as fh:
        baseline = json.load(fh)
    stream = _load_trace(args.trace, code="MALFORMED_STREAM")
    if not stream:
        raise PlannerError("MALFORMED_STREAM", "stream has no requests")
    cfg = load_config(args.config) if args.config else None
    policy = cfg.drift if cfg else DriftPolicy()
    overrides = {k: v for k, v in (("window_requests", args.window_requests),
                                   ("window_interval_s", args.window_interval),
                                   ("rel_tolerance", args.tolerance)) if v is not None}
    if overrides:
        policy = DriftPolicy(**{**policy.to_dict(), **overrides})
    report = detect(baseline["stats"], stream, policy, baseline.get("h1"))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if report["drift_detected"] and args.replan:
        if cfg is None:
            raise PlannerError("BAD_INPUT", "--replan needs --config")
        # re-plan on the most recent drifted window
        last = max(w["index"] for w in report["windows"] if w["drifted"])
        recent = windows(stream, policy)[last][2]
        plan, _ = plan_pipeline(cfg.with_seed(args.seed), recent, out / "replan",
                                args.min_quality, args.max_latency)
        report["replan"] = {"window": last, "requests": len(recent),
                            "plan": "replan/plan.json",
                            "allocations": list(plan.allocations)}
    dump_json(out / "drift.json", report)
    if report["drift_detected"]:
        log.warning("drift in window %d: %s", report["first_drift_window"],
                    report["windows"][report["first_drift_window"]]["drifted"])
    return 0


def cmd_gen_trace(args) -> int:
    spec = {}
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    flags = {
        "count": args.count, "rate": args.rate, "input_mean": args.input_mean,
        "output_means": _floats(args.output_means) if args.output_means else None,
        "score_means": _floats(args.score_means) if args.score_means else None,
        "score_stds": _floats(args.score_stds) if args.score_stds else None,
        "score_corr": args.score_corr, "length_dist": args.length_dist, "seed": args.seed,
    }
    spec.update({k: v for k, v in flags.items() if v is not None})
    if "count" not in spec or "rate" not in spec:
        raise PlannerError("BAD_INPUT", "--count and --rate are required")
    try:
        trace_spec = TraceSpec.from_dict(spec)
    except (TypeError, ValueError) as exc:
        raise PlannerError("BAD_INPUT", str(exc)) from exc
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_trace(args.out, generate_trace(trace_spec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cascade-planner", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="choose thresholds, allocations and parallelism")
    p.add_argument("--config", required=True)
    p.add_argument("--trace", required=True)
    req = p.add_mutually_exclusive_group()
    req.add_argument("--min-quality", type=float)
    req.add_argument("--max-latency", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plan)

    def sim_flags(q):
        q.add_argument("--config", required=True)
        q.add_argument("--trace", required=True)
        q.add_argument("--scales", help="comma-separated SLO multipliers")
        q.add_argument("--slo-base", type=float, help="SLO base latency in seconds")
        q.add_argument("--warmup", type=float, default=0.1)
        q.add_argument("--seed", type=int)
        q.add_argument("--out-dir", required=True)

    s = sub.add_parser("simulate", help="replay a trace against a plan")
    s.add_argument("--plan", required=True)
    sim_flags(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="replay one trace against several plans")
    c.add_argument("--plans", nargs="+", required=True)
    sim_flags(c)
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("drift", help="check a request stream against planning-time stats")
    d.add_argument("--baseline", required=True)
    d.add_argument("--trace", required=True)
    d.add_argument("--config")
    d.add_argument("--window-requests", type=int)
    d.add_argument("--window-interval", type=float)
    d.add_argument("--tolerance", type=float)
    d.add_argument("--replan", action="store_true")
    dreq = d.add_mutually_exclusive_group()
    dreq.add_argument("--min-quality", type=float)
    dreq.add_argument("--max-latency", type=float)
    d.add_argument("--seed", type=int)
    d.add_argument("--out-dir", required=True)
    d.set_defaults(func=cmd_drift)

    g = sub.add_parser("gen-trace", help="write a synthetic JSONL trace")
    g.add_argument("--spec", help="JSON file with TraceSpec fields; flags override it")
    g.add_argument("--count", type=int)
    g.add_argument("--rate", type=float)
    g.add_argument("--input-mean", type=float)
    g.add_argument("--output-means")
    g.add_argument("--score-means")
    g.add_argument("--score-stds")
    g.add_argument("--score-corr", type=float)
    g.add_argument("--length-dist", choices=("exponential", "constant"))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_trace)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except PlannerError as exc:
        err = exc
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        err = PlannerError("BAD_INPUT", f"{type(exc).__name__}: {exc}")
    print(json.dumps(err.to_dict()), file=sys.stderr)
    return EXIT_CODES.get(err.code, 1)


if __name__ == "__main__":
    sys.exit(main())
