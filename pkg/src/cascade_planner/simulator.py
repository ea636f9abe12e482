"""Trace-driven discrete-event replay of a cascade plan.

Requests enter the first deployed stage at their trace timestamps.  Each
stage is a pool of FCFS replicas; a request goes to the replica that would
finish it earliest, using the trace's real token counts.  After service the
judged score decides between accepting and joining the next stage's queue.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .costmodel import CostModelParams, decode_time, percentile95, prefill_time
from .domain import (CascadePlan, HardwareSpec, ModelSpec, PlannerError, ReplicaShape,
                     TraceRecord, dump_json, validate_plan)

DEFAULT_SCALES = (1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.5, 15.0, 20.0,
                  25.0, 30.0, 40.0, 50.0)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    slo_base_s: Optional[float] = None  # None: mean no-contention latency of the plan
    slo_scales: tuple[float, ...] = DEFAULT_SCALES
    warmup_fraction: float = 0.1

    def __post_init__(self):
        scales = tuple(float(s) for s in self.slo_scales)
        object.__setattr__(self, "slo_scales", scales)
        if any(s <= 0 for s in scales) or list(scales) != sorted(scales):
            raise ValueError("slo_scales must be positive and ascending")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.slo_base_s is not None and self.slo_base_s <= 0:
            raise ValueError("slo_base_s must be positive")


@dataclass
class RequestResult:
    end_to_end_s: float
    accept_stage: int  # 1-based
    service_s: float = 0.0
    wait_s: float = 0.0

    def to_dict(self) -> dict:
        return {"end_to_end_s": self.end_to_end_s, "accept_stage": self.accept_stage,
                "service_s": self.service_s, "wait_s": self.wait_s}


@dataclass
class SimReport:
    per_request: list[RequestResult]
    p95_s: float
    throughput_rps: float
    attainment: list[tuple[float, float]]
    min_scale_95: Optional[float]
    slo_base_s: float
    offered_rate_rps: float
    warmup_requests: int
    stage_utilization: list[Optional[float]]
    unstable: bool = False
    unstable_stages: list[int] = field(default_factory=list)

    def latencies(self, include_warmup: bool = False) -> list[float]:
        start = 0 if include_warmup else self.warmup_requests
        return [r.end_to_end_s for r in self.per_request[start:]]

    def to_dict(self) -> dict:
        return {
            "p95_s": self.p95_s,
            "throughput_rps": self.throughput_rps,
            "offered_rate_rps": self.offered_rate_rps,
            "attainment": [[s, f] for s, f in self.attainment],
            "min_scale_95": self.min_scale_95,
            "slo_base_s": self.slo_base_s,
            "warmup_requests": self.warmup_requests,
            "stage_utilization": self.stage_utilization,
            "unstable": self.unstable,
            "unstable_stages": self.unstable_stages,
            "per_request": [r.to_dict() for r in self.per_request],
        }


class _Pool:
    """Replicas of one stage grouped by shape; a min-heap of free times per group."""

    def __init__(self, plan, model: ModelSpec, hw: HardwareSpec, params: CostModelParams):
        counts: dict[ReplicaShape, int] = {}
        for r in plan.replicas:
            counts[r] = counts.get(r, 0) + 1
        self.shapes = list(counts)
        self.heaps = [[0.0] * n for n in counts.values()]
        self.n_replicas = plan.dp
        self.decode = [decode_time(s, model, hw, params) for s in self.shapes]
        self._prefill = {}
        self.model, self.hw, self.params = model, hw, params
        self.busy = 0.0

    def service(self, k: int, input_tokens: int, output_tokens: int) -> float:
        key = (k, input_tokens)
        pre = self._prefill.get(key)
        if pre is None:
            pre = prefill_time(self.shapes[k], self.model, input_tokens, self.hw, self.params)
            self._prefill[key] = pre
        return pre + output_tokens * self.decode[k]

    def fastest(self, input_tokens: int, output_tokens: int) -> float:
        return min(self.service(k, input_tokens, output_tokens) for k in range(len(self.shapes)))

    def dispatch(self, t: float, input_tokens: int, output_tokens: int) -> tuple[float, float]:
        """Queue a request arriving at ``t``; returns (completion time, service time)."""
        best_done, best_k, best_svc = math.inf, 0, 0.0
        for k, heap in enumerate(self.heaps):
            svc = self.service(k, input_tokens, output_tokens)
            done = max(heap[0], t) + svc
            if done < best_done:
                best_done, best_k, best_svc = done, k, svc
        heapq.heapreplace(self.heaps[best_k], best_done)
        self.busy += best_svc
        return best_done, best_svc


def _check(plan: CascadePlan, trace: Sequence[TraceRecord], models, hw) -> None:
    if not trace:
        raise PlannerError("EMPTY_TRACE", "trace has no requests")
    problems = validate_plan(plan, hw, models)
    if problems:
        raise PlannerError("INVALID_PLAN", "; ".join(problems))
    if len(trace[0].per_stage) != plan.n_stages:
        raise PlannerError("INVALID_PLAN", "plan and trace disagree on the number of stages")


def _path(plan: CascadePlan, rec: TraceRecord) -> list[int]:
    stages = [i for i, p in enumerate(plan.plans) if p is not None]
    out = []
    for i in stages:
        out.append(i)
        if i == stages[-1] or rec.per_stage[i].score >= plan.thresholds.thresholds[i]:
            break
    return out


def no_contention_latency(plan: CascadePlan, trace: Sequence[TraceRecord], models,
                          hw: HardwareSpec, params: CostModelParams) -> float:
    """Mean latency along each request's accept path on an idle system."""
    pools = {i: _Pool(p, models[i], hw, params) for i, p in enumerate(plan.plans) if p is not None}
    total = math.fsum(
        sum(pools[i].fastest(r.input_tokens, r.per_stage[i].output_tokens) for i in _path(plan, r))
        for r in trace)
    return total / len(trace)


def attainment_curve(report: SimReport, cfg: SimConfig) -> list[tuple[float, float]]:
    lat = report.latencies()
    if not lat:
        return [(s, 1.0) for s in cfg.slo_scales]
    return [(s, sum(1 for x in lat if x <= s * report.slo_base_s) / len(lat))
            for s in cfg.slo_scales]


def _min_scale(curve: Sequence[tuple[float, float]], target: float = 0.95) -> Optional[float]:
    return next((s for s, frac in curve if frac >= target), None)


def run(plan: CascadePlan, trace: Sequence[TraceRecord], models: Sequence[ModelSpec],
        hw: HardwareSpec, params: CostModelParams, cfg: SimConfig = SimConfig()) -> SimReport:
    _check(plan, trace, models, hw)
    C = plan.n_stages
    pools = {i: _Pool(p, models[i], hw, params) for i, p in enumerate(plan.plans) if p is not None}
    stages = sorted(pools)
    nxt = {a: b for a, b in zip(stages, stages[1:])}
    h = plan.thresholds.thresholds

    n = len(trace)
    results: list[Optional[RequestResult]] = [None] * n
    service = [0.0] * n
    stage_waits: dict[int, list[tuple[int, float]]] = {i: [] for i in stages}
    events = [(rec.arrival_s, k, stages[0], k) for k, rec in enumerate(trace)]
    heapq.heapify(events)
    seq = n
    last_done = -math.inf
    while events:
        t, _, i, k = heapq.heappop(events)
        rec = trace[k]
        done, svc = pools[i].dispatch(t, rec.input_tokens, rec.per_stage[i].output_tokens)
        service[k] += svc
        stage_waits[i].append((k, done - svc - t))
        if i not in nxt or rec.per_stage[i].score >= h[i]:
            e2e = done - rec.arrival_s
            results[k] = RequestResult(e2e, i + 1, service[k], e2e - service[k])
            last_done = max(last_done, done)
        else:
            heapq.heappush(events, (done, seq, nxt[i], k))
            seq += 1

    warm = int(cfg.warmup_fraction * n)
    first, last_arrival = trace[0].arrival_s, trace[-1].arrival_s
    makespan = last_done - first
    throughput = n / makespan if makespan > 0 else math.inf
    offered = n / (last_arrival - first) if last_arrival > first else math.inf
    util: list[Optional[float]] = [None] * C
    unstable_stages = []
    for i, pool in pools.items():
        util[i] = pool.busy / (pool.n_replicas * makespan) if makespan > 0 else 0.0
        waits = [w for k, w in sorted(stage_waits[i]) if k >= warm]
        if len(waits) >= 20:
            half = len(waits) // 2
            early = math.fsum(waits[:half]) / half
            late = math.fsum(waits[half:]) / (len(waits) - half)
            mean_svc = pool.busy / len(stage_waits[i])
            if late > 2.0 * early + mean_svc:
                unstable_stages.append(i + 1)

    base = cfg.slo_base_s if cfg.slo_base_s is not None else \
        no_contention_latency(plan, trace, models, hw, params)
    lat = [r.end_to_end_s for r in results[warm:]]
    report = SimReport(
        per_request=results, p95_s=percentile95(lat), throughput_rps=throughput,
        attainment=[], min_scale_95=None, slo_base_s=base, offered_rate_rps=offered,
        warmup_requests=warm, stage_utilization=util,
        unstable=bool(unstable_stages), unstable_stages=unstable_stages)
    report.attainment = attainment_curve(report, cfg)
    report.min_scale_95 = _min_scale(report.attainment)
    return report


@dataclass
class ComparisonRow:
    name: str
    p95_s: float
    throughput_rps: float
    min_scale_95: Optional[float]
    report: SimReport

    def to_dict(self) -> dict:
        return {"name": self.name, "p95_s": self.p95_s, "throughput_rps": self.throughput_rps,
                "min_scale_95": self.min_scale_95}


def compare(plans: Sequence[CascadePlan], trace: Sequence[TraceRecord],
            models: Sequence[ModelSpec], hw: HardwareSpec, params: CostModelParams,
            cfg: SimConfig = SimConfig(), names: Optional[Sequence[str]] = None
            ) -> list[ComparisonRow]:
    """Replay every plan on the same trace.  Without an explicit SLO base,
    all plans are scored against the first plan's no-contention latency."""
    if len(plans) < 2:
        raise ValueError("compare needs at least two plans")
    names = list(names) if names is not None else [f"plan_{k}" for k in range(len(plans))]
    if cfg.slo_base_s is None:
        _check(plans[0], trace, models, hw)
        base = no_contention_latency(plans[0], trace, models, hw, params)
        cfg = SimConfig(cfg.seed, base, cfg.slo_scales, cfg.warmup_fraction)
    rows = []
    for name, plan in zip(names, plans):
        rep = run(plan, trace, models, hw, params, cfg)
        rows.append(ComparisonRow(name, rep.p95_s, rep.throughput_rps, rep.min_scale_95, rep))
    return rows


def write_report(report: SimReport, json_path: str | Path, csv_path: str | Path) -> None:
    dump_json(json_path, report.to_dict())
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["scale", "fraction"])
        for s, f in report.attainment:
            out.writerow([repr(s), repr(f)])
