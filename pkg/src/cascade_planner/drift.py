"""Windowed workload monitoring against the statistics a plan was built for."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .domain import TraceRecord
from .routing import trace_arrival_rate

MONITORED = ("arrival_rate", "mean_input_tokens", "mean_output_tokens", "stage1_accept_rate")


@dataclass(frozen=True)
class DriftPolicy:
    window_requests: int = 100
    window_interval_s: float = 600.0
    rel_tolerance: float = 0.2
    # Reported only; model reload time is not simulated.
    reload_cost_s: float = 0.0

    def __post_init__(self):
        if self.window_requests < 1 or not self.window_interval_s > 0:
            raise ValueError("window size and interval must be positive")
        if not 0.0 < self.rel_tolerance < 1.0:
            raise ValueError("rel_tolerance must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DriftPolicy":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def workload_snapshot(records: Sequence[TraceRecord], h1: Optional[float]) -> dict:
    """Monitored statistics of a batch of requests.  Output lengths and the
    acceptance rate refer to the first stage; with a single stage (no
    threshold) everything counts as accepted."""
    n = len(records)
    if n == 0:
        raise ValueError("cannot summarize an empty window")
    accepted = n if h1 is None else sum(1 for r in records if r.per_stage[0].score >= h1)
    return {
        "arrival_rate": trace_arrival_rate(records),
        "mean_input_tokens": math.fsum(r.input_tokens for r in records) / n,
        "mean_output_tokens": math.fsum(r.per_stage[0].output_tokens for r in records) / n,
        "stage1_accept_rate": accepted / n,
    }


def relative_deviation(value: float, base: float) -> float:
    if base == 0:
        return 0.0 if value == 0 else math.inf
    return abs(value - base) / abs(base)


def windows(stream: Sequence[TraceRecord], policy: DriftPolicy) -> list[tuple[float, list[TraceRecord], list[TraceRecord]]]:
    """Split by ``window_interval_s`` from the first arrival; returns
    (window start, subsample of the first ``window_requests``, all requests)."""
    if not stream:
        return []
    t0 = stream[0].arrival_s
    buckets: dict[int, list[TraceRecord]] = {}
    for r in stream:
        buckets.setdefault(int((r.arrival_s - t0) // policy.window_interval_s), []).append(r)
    return [(t0 + k * policy.window_interval_s, recs[: policy.window_requests], recs)
            for k, recs in sorted(buckets.items())]


def detect(baseline: dict, stream: Sequence[TraceRecord], policy: DriftPolicy,
           h1: Optional[float]) -> dict:
    out = []
    for idx, (start, sample, _) in enumerate(windows(stream, policy)):
        stats = workload_snapshot(sample, h1)
        dev = {k: relative_deviation(stats[k], baseline[k]) for k in MONITORED}
        drifted = [k for k in MONITORED if dev[k] > policy.rel_tolerance]
        out.append({"index": idx, "start_s": start, "sampled": len(sample), "stats": stats,
                    "deviations": {k: (None if math.isinf(v) else v) for k, v in dev.items()},
                    "drifted": drifted})
    first = next((w["index"] for w in out if w["drifted"]), None)
    return {
        "policy": policy.to_dict(),
        "baseline": baseline,
        "windows": out,
        "drift_detected": first is not None,
        "first_drift_window": first,
        "model_reload_cost_s": policy.reload_cost_s,
    }
