"""Threshold routing over a scored trace.

Each request starts at the first deployed stage and is accepted at stage i
when its judged score there is at least h_i; otherwise it moves on.  The
last deployed stage accepts everything that reaches it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .domain import FORWARD_ALL, PlannerError, RoutingThresholds, TraceRecord, WorkloadStats


@dataclass(frozen=True)
class RoutingOutcome:
    ratios: tuple[float, ...]
    stage_workloads: tuple[WorkloadStats, ...]
    quality: float
    per_request_accept_stage: tuple[int, ...]  # 1-based

    def to_dict(self) -> dict:
        return {
            "ratios": list(self.ratios),
            "stage_workloads": [w.to_dict() for w in self.stage_workloads],
            "quality": self.quality,
            "per_request_accept_stage": list(self.per_request_accept_stage),
        }


def trace_arrival_rate(trace: Sequence[TraceRecord]) -> float:
    """Requests/s estimated as (n - 1) / span; a trace with no span counts as n req/s."""
    n = len(trace)
    span = trace[-1].arrival_s - trace[0].arrival_s if n else 0.0
    if n >= 2 and span > 0:
        return (n - 1) / span
    return float(n)


class TraceArrays:
    """Column view of a trace, built once and reused across threshold vectors."""

    def __init__(self, trace: Sequence[TraceRecord]):
        if not trace:
            raise PlannerError("EMPTY_TRACE", "trace has no requests")
        self.n = len(trace)
        self.n_stages = len(trace[0].per_stage)
        self.rate = trace_arrival_rate(trace)
        self.input_tokens = np.array([r.input_tokens for r in trace], dtype=float)
        self.output_tokens = np.array([[s.output_tokens for s in r.per_stage] for r in trace],
                                      dtype=float).reshape(self.n, self.n_stages)
        self.scores = np.array([[s.score for s in r.per_stage] for r in trace],
                               dtype=float).reshape(self.n, self.n_stages)


def _stats(rate: float, inp: np.ndarray, out: np.ndarray) -> WorkloadStats:
    if inp.size == 0:
        return WorkloadStats.empty()
    mi, mo = float(inp.mean()), float(out.mean())
    pi, po = float(np.percentile(inp, 95)), float(np.percentile(out, 95))
    return WorkloadStats(rate, mi, mo, max(pi, mi), max(po, mo))


def route_trace(trace: Sequence[TraceRecord] | TraceArrays, H: RoutingThresholds,
                deployed: Optional[Sequence[bool]] = None) -> RoutingOutcome:
    arr = trace if isinstance(trace, TraceArrays) else TraceArrays(trace)
    C = arr.n_stages
    deployed = [True] * C if deployed is None else list(deployed)
    if len(deployed) != C:
        raise ValueError(f"deployed mask has {len(deployed)} entries for {C} stages")
    if len(H) != C - 1:
        raise ValueError(f"expected {C - 1} thresholds, got {len(H)}")
    stages = [i for i in range(C) if deployed[i]]
    if not stages:
        raise PlannerError("NO_DEPLOYED_STAGE", "at least one stage must be deployed")

    accept = np.full(arr.n, -1, dtype=int)
    pending = np.ones(arr.n, dtype=bool)
    reached = np.zeros((C, arr.n), dtype=bool)
    for i in stages:
        reached[i] = pending
        if i == stages[-1]:
            take = pending
        else:
            take = pending & (arr.scores[:, i] >= H.thresholds[i])
        accept[take] = i
        pending = pending & ~take

    ratios = tuple(float(reached[i].sum()) / arr.n for i in range(C))
    workloads = tuple(
        _stats(arr.rate * ratios[i], arr.input_tokens[reached[i]], arr.output_tokens[reached[i], i])
        for i in range(C))
    quality = math.fsum(arr.scores[np.arange(arr.n), accept].tolist()) / arr.n
    return RoutingOutcome(ratios, workloads, quality, tuple(int(a) + 1 for a in accept))


def all_accept(n_stages: int) -> RoutingThresholds:
    return RoutingThresholds((0.0,) * (n_stages - 1))


def all_forward(n_stages: int) -> RoutingThresholds:
    return RoutingThresholds((FORWARD_ALL,) * (n_stages - 1))


class QualityBounds(NamedTuple):
    q_min: float
    q_max: float


def quality_bounds(trace: Sequence[TraceRecord] | TraceArrays,
                   deployed: Optional[Sequence[bool]] = None) -> QualityBounds:
    """(q_min, q_max): quality when everything stops at the first deployed
    stage vs. when everything goes to the last one.  Not necessarily ordered."""
    arr = trace if isinstance(trace, TraceArrays) else TraceArrays(trace)
    C = arr.n_stages
    q_min = route_trace(arr, all_accept(C), deployed).quality
    q_max = route_trace(arr, all_forward(C), deployed).quality
    return QualityBounds(q_min, q_max)
