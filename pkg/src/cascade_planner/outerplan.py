"""Latency/quality trade-off search over routing thresholds.

For every threshold vector on a grid, routing gives per-stage workloads and
a quality score; the inner allocation solver turns the workloads into a
deployment and its worst-stage p95.  Weighted Tchebycheff scores against the
utopia point pick one candidate per weight pair, and the non-dominated
candidates form the front a final plan is chosen from.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .costmodel import (INFEASIBLE, CostModelParams, latency_row, precompute_rows,
                        stage_p95_latency)
from .domain import (FORWARD_ALL, CascadePlan, HardwareSpec, ModelSpec, ObjectivePoint,
                     PlannerError, RoutingThresholds, TraceRecord, dump_json)
from .innerplan import LatencyTable, solve_min_max
from .routing import TraceArrays, all_accept, quality_bounds, route_trace

log = logging.getLogger(__name__)

DECILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class UtopiaPoint:
    z1_star: float  # seconds
    z2_star: float  # score

    def to_dict(self) -> dict:
        return {"z1_star": self.z1_star, "z2_star": self.z2_star}


@dataclass(frozen=True)
class WeightPair:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValueError("Tchebycheff weights must be positive")

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2}


@dataclass(frozen=True)
class ParetoFront:
    points: tuple[ObjectivePoint, ...]

    def __len__(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        return {"points": [p.to_dict() for p in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParetoFront":
        return cls(tuple(ObjectivePoint.from_dict(p) for p in d["points"]))


@dataclass(frozen=True)
class SweepGrid:
    """Threshold candidates and weight ladder for :func:`sweep`.

    ``thresholds`` overrides the quantile grid with explicit per-stage
    candidate lists (one list per h_i).
    """

    quantiles: tuple[float, ...] = DECILES
    extra_thresholds: tuple[float, ...] = (0.0, FORWARD_ALL)
    thresholds: Optional[tuple[tuple[float, ...], ...]] = None
    weight_count: int = 9
    weight_ratio_min: float = 0.1
    weight_ratio_max: float = 10.0

    def to_dict(self) -> dict:
        return {
            "quantiles": list(self.quantiles),
            "extra_thresholds": list(self.extra_thresholds),
            "thresholds": [list(t) for t in self.thresholds] if self.thresholds else None,
            "weight_count": self.weight_count,
            "weight_ratio_min": self.weight_ratio_min,
            "weight_ratio_max": self.weight_ratio_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        th = d.get("thresholds")
        return cls(
            quantiles=tuple(float(q) for q in d.get("quantiles", DECILES)),
            extra_thresholds=tuple(float(h) for h in d.get("extra_thresholds", (0.0, FORWARD_ALL))),
            thresholds=tuple(tuple(float(h) for h in hs) for hs in th) if th else None,
            weight_count=int(d.get("weight_count", 9)),
            weight_ratio_min=float(d.get("weight_ratio_min", 0.1)),
            weight_ratio_max=float(d.get("weight_ratio_max", 10.0)),
        )


def weight_ladder(grid: SweepGrid) -> list[WeightPair]:
    """Log-spaced lambda1/lambda2 ratios, each pair normalized to sum to 1."""
    if grid.weight_count == 1:
        ratios = [math.sqrt(grid.weight_ratio_min * grid.weight_ratio_max)]
    else:
        ratios = np.logspace(math.log10(grid.weight_ratio_min), math.log10(grid.weight_ratio_max),
                             grid.weight_count).tolist()
    return [WeightPair(r / (1.0 + r), 1.0 / (1.0 + r)) for r in ratios]


def tchebycheff_score(latency: float, quality: float, z: UtopiaPoint, w: WeightPair) -> float:
    return max(w.lambda1 * (latency - z.z1_star), w.lambda2 * (z.z2_star - quality))


def pareto_filter(points: Sequence[ObjectivePoint]) -> ParetoFront:
    """Non-dominated subset (lower latency, higher quality), sorted by latency.
    Points equal in both objectives collapse to the first one given."""
    order = sorted(range(len(points)), key=lambda k: (points[k].latency_s, -points[k].quality, k))
    kept = []
    best_q = -math.inf
    for k in order:
        if points[k].quality > best_q:
            kept.append(points[k])
            best_q = points[k].quality
    return ParetoFront(tuple(kept))


def threshold_grid(arr: TraceArrays, grid: SweepGrid) -> list[tuple[float, ...]]:
    """Per-threshold candidate lists: observed-score quantiles plus the extras."""
    C = arr.n_stages
    if grid.thresholds is not None:
        if len(grid.thresholds) != C - 1:
            raise ValueError(f"grid lists {len(grid.thresholds)} thresholds, cascade needs {C - 1}")
        return [tuple(sorted(set(hs))) for hs in grid.thresholds]
    out = []
    for i in range(C - 1):
        qs = np.quantile(arr.scores[:, i], grid.quantiles, method="lower").tolist() \
            if grid.quantiles else []
        out.append(tuple(sorted(set(float(v) for v in qs) | set(grid.extra_thresholds))))
    return out


def compute_utopia(trace: Sequence[TraceRecord] | TraceArrays, models: Sequence[ModelSpec],
                   hw: HardwareSpec, params: CostModelParams,
                   n_gpus: Optional[int] = None) -> UtopiaPoint:
    """Best-case corners: the smallest model alone on all GPUs (latency) and
    every request answered by the largest model (quality)."""
    arr = trace if isinstance(trace, TraceArrays) else TraceArrays(trace)
    n = hw.gpu_count if n_gpus is None else n_gpus
    C = arr.n_stages
    w1 = route_trace(arr, all_accept(C)).stage_workloads[0]
    z1 = stage_p95_latency(n, models[0], w1, hw, params).latency_s
    if z1 == INFEASIBLE:
        raise PlannerError("INFEASIBLE_PROBLEM",
                           f"{models[0].id} cannot serve the whole trace on {n} GPUs")
    return UtopiaPoint(z1, quality_bounds(arr).q_max)


class CandidateEvaluator:
    """Threshold vector -> ObjectivePoint with its full CascadePlan, memoized."""

    def __init__(self, arr: TraceArrays, models: Sequence[ModelSpec], hw: HardwareSpec,
                 params: CostModelParams, n_gpus: int):
        self.arr, self.models, self.hw, self.params, self.n = arr, list(models), hw, params, n_gpus
        self._solved: dict = {}

    def _solve(self, workloads, deployed):
        key = (tuple(workloads), tuple(deployed))
        if key not in self._solved:
            idx = [i for i, d in enumerate(deployed) if d]
            rows = [latency_row(self.n, self.models[i], workloads[i], self.hw, self.params)
                    for i in idx]
            table = LatencyTable(tuple(tuple(c.latency_s for c in r) for r in rows),
                                 tuple(tuple(c.best_plan for c in r) for r in rows))
            try:
                self._solved[key] = (idx, solve_min_max(table, self.n))
            except PlannerError as exc:
                self._solved[key] = exc
        res = self._solved[key]
        if isinstance(res, PlannerError):
            raise res
        return res

    def __call__(self, H: RoutingThresholds) -> ObjectivePoint:
        C = self.arr.n_stages
        outcome = route_trace(self.arr, H)
        deployed = [p > 0 for p in outcome.ratios]
        idx, sol = self._solve(outcome.stage_workloads, deployed)
        alloc = [0] * C
        plans = [None] * C
        for k, i in enumerate(idx):
            alloc[i] = sol.allocations[k]
            plans[i] = sol.per_stage_plan[k]
        plan = CascadePlan(tuple(alloc), tuple(plans), H, sol.objective_L, outcome.quality,
                           outcome.ratios)
        return ObjectivePoint(sol.objective_L, outcome.quality, H, plan)


@dataclass
class SweepResult:
    front: ParetoFront
    evaluations: list[ObjectivePoint]
    selections: list[tuple[WeightPair, ObjectivePoint]]
    utopia: UtopiaPoint
    skipped: list[RoutingThresholds] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "utopia": self.utopia.to_dict(),
            "front": [p.to_dict() for p in self.front.points],
            "selections": [{"weights": w.to_dict(), "latency_s": p.latency_s,
                            "quality": p.quality, "thresholds": list(p.thresholds.thresholds)}
                           for w, p in self.selections],
            "evaluated": len(self.evaluations),
            "skipped": [list(h.thresholds) for h in self.skipped],
        }


def argmin_tchebycheff(points: Sequence[ObjectivePoint], z: UtopiaPoint,
                       w: WeightPair) -> ObjectivePoint:
    # ties go to lower latency, then higher quality, so the pick is never dominated
    return min(points, key=lambda p: (tchebycheff_score(p.latency_s, p.quality, z, w),
                                      p.latency_s, -p.quality))


def sweep(trace: Sequence[TraceRecord] | TraceArrays, models: Sequence[ModelSpec],
          hw: HardwareSpec, params: CostModelParams, n_gpus: Optional[int] = None,
          grid: SweepGrid = SweepGrid(), workers: Optional[int] = None) -> SweepResult:
    arr = trace if isinstance(trace, TraceArrays) else TraceArrays(trace)
    if len(models) != arr.n_stages:
        raise ValueError(f"{len(models)} models for a {arr.n_stages}-stage trace")
    n = hw.gpu_count if n_gpus is None else n_gpus
    z = compute_utopia(arr, models, hw, params, n)
    evaluate = CandidateEvaluator(arr, models, hw, params, n)

    candidates = [RoutingThresholds(hs) for hs in itertools.product(*threshold_grid(arr, grid))]
    needed = []
    for H in candidates:
        out = route_trace(arr, H)
        needed += [(n, models[i], w, hw, params) for i, w in enumerate(out.stage_workloads)
                   if out.ratios[i] > 0]
    precompute_rows(needed, workers)

    evaluated, skipped = [], []
    for H in candidates:
        hs = H.thresholds
        try:
            evaluated.append(evaluate(H))
        except PlannerError as exc:
            log.info("thresholds %s skipped: %s", hs, exc)
            skipped.append(H)
    if not evaluated:
        raise PlannerError("INFEASIBLE_PROBLEM", "every threshold candidate is infeasible")

    selections = [(w, argmin_tchebycheff(evaluated, z, w)) for w in weight_ladder(grid)]
    return SweepResult(pareto_filter(evaluated), evaluated, selections, z, skipped)


def select_point(front: ParetoFront, min_quality: Optional[float] = None,
                 max_latency: Optional[float] = None) -> ObjectivePoint:
    """Lowest-latency point meeting ``min_quality``, or highest-quality point
    within ``max_latency``.  Exactly one requirement must be given."""
    if (min_quality is None) == (max_latency is None):
        raise ValueError("give exactly one of min_quality / max_latency")
    if not front.points:
        raise PlannerError("NO_FEASIBLE_POINT", "front is empty")
    if min_quality is not None:
        ok = [p for p in front.points if p.quality >= min_quality]
        if not ok:
            raise PlannerError("NO_FEASIBLE_POINT", f"no plan reaches quality {min_quality}")
        return min(ok, key=lambda p: (p.latency_s, -p.quality))
    ok = [p for p in front.points if p.latency_s <= max_latency]
    if not ok:
        raise PlannerError("NO_FEASIBLE_POINT", f"no plan within {max_latency} s")
    return max(ok, key=lambda p: (p.quality, -p.latency_s))


def select_plan(front: ParetoFront, min_quality: Optional[float] = None,
                max_latency: Optional[float] = None) -> CascadePlan:
    point = select_point(front, min_quality, max_latency)
    if point.plan_ref is None:
        raise ValueError("selected front point carries no plan")
    return point.plan_ref


def write_front(front: ParetoFront, json_path: str | Path, csv_path: str | Path) -> None:
    dump_json(json_path, front.to_dict())
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["latency_s", "quality", "thresholds", "allocations"])
        for p in front.points:
            alloc = p.plan_ref.allocations if p.plan_ref is not None else ()
            out.writerow([repr(p.latency_s), repr(p.quality),
                          ";".join(repr(h) for h in p.thresholds.thresholds),
                          ";".join(str(f) for f in alloc)])


def load_front(path: str | Path) -> ParetoFront:
    with open(path, encoding="utf-8") as fh:
        return ParetoFront.from_dict(json.load(fh))
