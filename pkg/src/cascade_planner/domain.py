"""Core value types shared by the planner, router and simulator.

Everything here is an immutable dataclass with a ``to_dict``/``from_dict``
pair; JSON field names are the dataclass field names.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

SCORE_MIN = 0.0
SCORE_MAX = 100.0
# Threshold value that forwards every request (scores never exceed 100).
FORWARD_ALL = 101.0


class PlannerError(Exception):
    """Error carrying a machine-readable code (``INFEASIBLE_PROBLEM`` etc.)."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message

    def to_dict(self) -> dict:
        return {"error": self.code, "message": self.message}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class HardwareSpec:
    gpu_count: int
    flops_per_gpu: float
    mem_bandwidth_per_gpu: float
    mem_capacity_per_gpu: float
    intra_node_bw: float
    inter_node_bw: float
    gpus_per_node: int

    def __post_init__(self):
        for name in ("gpu_count", "flops_per_gpu", "mem_bandwidth_per_gpu",
                     "mem_capacity_per_gpu", "intra_node_bw", "inter_node_bw",
                     "gpus_per_node"):
            _require(getattr(self, name) > 0, f"HardwareSpec.{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "gpu_count": self.gpu_count,
            "flops_per_gpu": self.flops_per_gpu,
            "mem_bandwidth_per_gpu": self.mem_bandwidth_per_gpu,
            "mem_capacity_per_gpu": self.mem_capacity_per_gpu,
            "intra_node_bw": self.intra_node_bw,
            "inter_node_bw": self.inter_node_bw,
            "gpus_per_node": self.gpus_per_node,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareSpec":
        return cls(
            gpu_count=int(d["gpu_count"]),
            flops_per_gpu=float(d["flops_per_gpu"]),
            mem_bandwidth_per_gpu=float(d["mem_bandwidth_per_gpu"]),
            mem_capacity_per_gpu=float(d["mem_capacity_per_gpu"]),
            intra_node_bw=float(d["intra_node_bw"]),
            inter_node_bw=float(d["inter_node_bw"]),
            gpus_per_node=int(d["gpus_per_node"]),
        )


@dataclass(frozen=True)
class ModelSpec:
    """One cascade stage. ``min_gpus`` is filled in from the hardware by
    :func:`cascade_planner.costmodel.with_min_gpus`."""

    id: str
    param_count: float
    bytes_per_param: float
    kv_bytes_per_token: float
    stage_index: int
    min_gpus: int = 1

    def __post_init__(self):
        _require(self.param_count >= 0, "param_count must be >= 0")
        _require(self.bytes_per_param > 0, "bytes_per_param must be positive")
        _require(self.kv_bytes_per_token >= 0, "kv_bytes_per_token must be >= 0")
        _require(self.stage_index >= 1, "stage_index is 1-based")
        _require(self.min_gpus >= 1, "min_gpus must be >= 1")

    @property
    def weight_bytes(self) -> float:
        return self.param_count * self.bytes_per_param

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "param_count": self.param_count,
            "bytes_per_param": self.bytes_per_param,
            "kv_bytes_per_token": self.kv_bytes_per_token,
            "min_gpus": self.min_gpus,
            "stage_index": self.stage_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            id=str(d["id"]),
            param_count=float(d["param_count"]),
            bytes_per_param=float(d["bytes_per_param"]),
            kv_bytes_per_token=float(d["kv_bytes_per_token"]),
            stage_index=int(d["stage_index"]),
            min_gpus=int(d.get("min_gpus", 1)),
        )


def check_cascade(models: Sequence[ModelSpec]) -> None:
    """Stage indices must be 1..C and sizes non-decreasing along the cascade."""
    _require(len(models) > 0, "cascade needs at least one model")
    for i, m in enumerate(models, start=1):
        _require(m.stage_index == i, f"model {m.id!r} has stage_index {m.stage_index}, expected {i}")
    for a, b in zip(models, models[1:]):
        _require(a.param_count <= b.param_count,
                 f"param_count decreases from {a.id!r} to {b.id!r}")


@dataclass(frozen=True)
class WorkloadStats:
    arrival_rate: float
    mean_input_tokens: float
    mean_output_tokens: float
    p95_input_tokens: float
    p95_output_tokens: float

    def __post_init__(self):
        _require(self.arrival_rate >= 0, "arrival_rate must be >= 0")
        for name in ("mean_input_tokens", "mean_output_tokens",
                     "p95_input_tokens", "p95_output_tokens"):
            _require(getattr(self, name) >= 0, f"{name} must be >= 0")
        # p95 >= mean can be violated by float noise on constant samples
        _require(self.p95_input_tokens >= self.mean_input_tokens * (1 - 1e-12),
                 "p95_input_tokens < mean_input_tokens")
        _require(self.p95_output_tokens >= self.mean_output_tokens * (1 - 1e-12),
                 "p95_output_tokens < mean_output_tokens")

    @classmethod
    def empty(cls) -> "WorkloadStats":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return {
            "arrival_rate": self.arrival_rate,
            "mean_input_tokens": self.mean_input_tokens,
            "mean_output_tokens": self.mean_output_tokens,
            "p95_input_tokens": self.p95_input_tokens,
            "p95_output_tokens": self.p95_output_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadStats":
        return cls(**{k: float(d[k]) for k in (
            "arrival_rate", "mean_input_tokens", "mean_output_tokens",
            "p95_input_tokens", "p95_output_tokens")})


@dataclass(frozen=True, order=True)
class ReplicaShape:
    tp: int = 1
    pp: int = 1

    def __post_init__(self):
        _require(self.tp >= 1 and self.pp >= 1, "tp and pp must be >= 1")

    @property
    def gpus(self) -> int:
        return self.tp * self.pp

    def to_dict(self) -> dict:
        return {"tp": self.tp, "pp": self.pp}

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicaShape":
        return cls(tp=int(d["tp"]), pp=int(d["pp"]))


def _canonical_key(s: ReplicaShape):
    return (-s.gpus, -s.tp)


@dataclass(frozen=True)
class ParallelismPlan:
    """Replicas of one model; ``len(replicas)`` is the data-parallel degree.

    Construction always stores replicas in canonical order (descending by
    GPUs per replica, then by tp) so equal multisets compare equal.
    """

    replicas: tuple[ReplicaShape, ...]
    gpus_used: int = field(default=-1)

    def __post_init__(self):
        reps = tuple(sorted(self.replicas, key=_canonical_key))
        _require(len(reps) > 0, "ParallelismPlan needs at least one replica")
        object.__setattr__(self, "replicas", reps)
        used = sum(r.gpus for r in reps)
        if self.gpus_used == -1:
            object.__setattr__(self, "gpus_used", used)
        _require(self.gpus_used == used, "gpus_used must equal sum of tp*pp")

    @property
    def dp(self) -> int:
        return len(self.replicas)

    def describe(self) -> str:
        """Compact ``(DP=2, TP=4), (TP=8)``-style summary."""
        groups: dict[ReplicaShape, int] = {}
        for r in self.replicas:
            groups[r] = groups.get(r, 0) + 1
        parts = []
        for shape, n in groups.items():
            bits = []
            if n > 1:
                bits.append(f"DP={n}")
            if shape.tp > 1:
                bits.append(f"TP={shape.tp}")
            if shape.pp > 1:
                bits.append(f"PP={shape.pp}")
            parts.append("(" + ", ".join(bits or ["DP=1"]) + ")")
        return ", ".join(parts)

    def to_dict(self) -> dict:
        return {"replicas": [r.to_dict() for r in self.replicas], "gpus_used": self.gpus_used}

    @classmethod
    def from_dict(cls, d: dict) -> "ParallelismPlan":
        return cls(tuple(ReplicaShape.from_dict(r) for r in d["replicas"]),
                   int(d.get("gpus_used", -1)))


def canonicalize(plan: ParallelismPlan) -> ParallelismPlan:
    # The constructor already sorts; rebuilding keeps this usable on plans
    # created through object.__new__ or copy tricks.
    return ParallelismPlan(tuple(plan.replicas))


@dataclass(frozen=True)
class RoutingThresholds:
    thresholds: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(h) for h in self.thresholds))
        for h in self.thresholds:
            _require(SCORE_MIN <= h <= FORWARD_ALL,
                     f"threshold {h} outside [{SCORE_MIN}, {FORWARD_ALL}]")

    def __len__(self) -> int:
        return len(self.thresholds)

    def to_dict(self) -> dict:
        return {"thresholds": list(self.thresholds)}

    @classmethod
    def from_dict(cls, d: dict) -> "RoutingThresholds":
        return cls(tuple(d["thresholds"]))


@dataclass(frozen=True)
class StageResult:
    output_tokens: int
    score: float

    def to_dict(self) -> dict:
        return {"output_tokens": self.output_tokens, "score": self.score}


@dataclass(frozen=True)
class TraceRecord:
    arrival_s: float
    input_tokens: int
    per_stage: tuple[StageResult, ...]

    def __post_init__(self):
        _require(self.input_tokens >= 0, "input_tokens must be >= 0")
        for s in self.per_stage:
            _require(SCORE_MIN <= s.score <= SCORE_MAX, f"score {s.score} outside [0, 100]")
            _require(s.output_tokens >= 0, "output_tokens must be >= 0")

    def to_dict(self) -> dict:
        return {
            "arrival_s": self.arrival_s,
            "input_tokens": self.input_tokens,
            "per_stage": [s.to_dict() for s in self.per_stage],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        return cls(
            arrival_s=float(d["arrival_s"]),
            input_tokens=int(d["input_tokens"]),
            per_stage=tuple(StageResult(int(s["output_tokens"]), float(s["score"]))
                            for s in d["per_stage"]),
        )


def check_trace(trace: Sequence[TraceRecord], n_stages: Optional[int] = None) -> None:
    prev = -math.inf
    for k, rec in enumerate(trace):
        _require(rec.arrival_s >= prev, f"arrival_s decreases at record {k}")
        prev = rec.arrival_s
        if n_stages is not None:
            _require(len(rec.per_stage) == n_stages,
                     f"record {k} has {len(rec.per_stage)} stages, expected {n_stages}")


def read_trace(path: str | Path, n_stages: Optional[int] = None) -> list[TraceRecord]:
    trace = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                trace.append(TraceRecord.from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trace record ({exc})") from exc
    check_trace(trace, n_stages)
    return trace


def write_trace(path: str | Path, trace: Iterable[TraceRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")


@dataclass(frozen=True)
class CascadePlan:
    allocations: tuple[int, ...]
    plans: tuple[Optional[ParallelismPlan], ...]
    thresholds: RoutingThresholds
    predicted_max_p95_s: float
    predicted_quality: float
    processing_ratios: tuple[float, ...]

    @property
    def n_stages(self) -> int:
        return len(self.allocations)

    @property
    def deployed(self) -> tuple[bool, ...]:
        return tuple(p is not None for p in self.plans)

    def to_dict(self) -> dict:
        return {
            "allocations": list(self.allocations),
            "plans": [p.to_dict() if p is not None else None for p in self.plans],
            "thresholds": self.thresholds.to_dict(),
            "predicted_max_p95_s": self.predicted_max_p95_s,
            "predicted_quality": self.predicted_quality,
            "processing_ratios": list(self.processing_ratios),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CascadePlan":
        return cls(
            allocations=tuple(int(f) for f in d["allocations"]),
            plans=tuple(ParallelismPlan.from_dict(p) if p is not None else None
                        for p in d["plans"]),
            thresholds=RoutingThresholds.from_dict(d["thresholds"]),
            predicted_max_p95_s=float(d["predicted_max_p95_s"]),
            predicted_quality=float(d["predicted_quality"]),
            processing_ratios=tuple(float(p) for p in d["processing_ratios"]),
        )


@dataclass(frozen=True)
class ObjectivePoint:
    latency_s: float
    quality: float
    thresholds: RoutingThresholds
    plan_ref: Optional[CascadePlan] = None

    def __post_init__(self):
        _require(self.latency_s >= 0, "latency_s must be >= 0")
        _require(SCORE_MIN <= self.quality <= SCORE_MAX, "quality outside [0, 100]")

    def to_dict(self) -> dict:
        return {
            "latency_s": self.latency_s,
            "quality": self.quality,
            "thresholds": self.thresholds.to_dict(),
            "plan_ref": self.plan_ref.to_dict() if self.plan_ref is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectivePoint":
        plan = d.get("plan_ref")
        return cls(
            latency_s=float(d["latency_s"]),
            quality=float(d["quality"]),
            thresholds=RoutingThresholds.from_dict(d["thresholds"]),
            plan_ref=CascadePlan.from_dict(plan) if plan is not None else None,
        )


def validate_plan(plan: CascadePlan, hw: HardwareSpec, models: Sequence[ModelSpec]) -> list[str]:
    """Return every violated invariant of ``plan``; an empty list means valid."""
    # imported here: costmodel depends on this module
    from .costmodel import memory_feasible

    problems: list[str] = []
    C = len(models)
    if not (len(plan.allocations) == len(plan.plans) == len(plan.processing_ratios) == C):
        problems.append(
            f"shape: expected {C} stages, got allocations={len(plan.allocations)} "
            f"plans={len(plan.plans)} ratios={len(plan.processing_ratios)}")
        return problems
    if len(plan.thresholds) != C - 1:
        problems.append(f"thresholds: expected {C - 1} values, got {len(plan.thresholds)}")

    total = sum(plan.allocations)
    if total != hw.gpu_count:
        problems.append(f"budget: allocations sum to {total}, cluster has {hw.gpu_count}")

    for i, (f, p, r, m) in enumerate(zip(plan.allocations, plan.plans,
                                         plan.processing_ratios, models), start=1):
        if f < 0:
            problems.append(f"stage {i}: negative allocation {f}")
        if not 0.0 <= r <= 1.0:
            problems.append(f"stage {i}: ratio {r} outside [0, 1]")
        zero_f, absent, zero_r = f == 0, p is None, r == 0.0
        if not (zero_f == absent == zero_r):
            problems.append(
                f"stage {i}: allocation {f}, plan {'absent' if absent else 'present'} and "
                f"ratio {r} disagree on whether the stage is deployed")
        if p is None:
            continue
        if p.gpus_used > f:
            problems.append(f"stage {i}: plan uses {p.gpus_used} GPUs but only {f} allocated")
        for shape in p.replicas:
            if not memory_feasible(shape, m, hw):
                problems.append(f"stage {i}: replica tp={shape.tp} pp={shape.pp} "
                                f"cannot hold {m.id}")
        if not p.replicas:
            problems.append(f"stage {i}: plan has no replicas")

    ratios = plan.processing_ratios
    if plan.plans and plan.plans[0] is not None and ratios[0] != 1.0:
        problems.append(f"ratios: p_1 = {ratios[0]}, expected 1 when stage 1 is deployed")
    for i in range(1, len(ratios)):
        if ratios[i] > ratios[i - 1]:
            problems.append(f"ratios: p_{i + 1} = {ratios[i]} exceeds p_{i} = {ratios[i - 1]}")
    if not (0.0 <= plan.predicted_quality <= 100.0):
        problems.append(f"quality: {plan.predicted_quality} outside [0, 100]")
    if not plan.predicted_max_p95_s >= 0.0:
        problems.append(f"latency: {plan.predicted_max_p95_s} is negative or NaN")
    return problems


def dump_json(path: str | Path, obj) -> None:
    """Write ``obj`` as stable, human-diffable JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
