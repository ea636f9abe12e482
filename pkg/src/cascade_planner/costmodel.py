"""Per-stage latency model: which replica shapes fit, how fast they serve,
and the p95 sojourn time a pool of replicas achieves under a workload.

Service times follow a two-term roofline: prefill is compute-bound
(2 FLOPs per parameter per prompt token), decode is bandwidth-bound (all
weight bytes read once per generated token).  Queueing on top of that is
estimated with a short seeded simulation.
"""

from __future__ import annotations

import heapq
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .domain import HardwareSpec, ModelSpec, ParallelismPlan, ReplicaShape, WorkloadStats

INFEASIBLE = math.inf
MAX_PP = 8
# Estimator output lengths are unit exponentials clipped here (in units of the mean).
OUTPUT_CLIP = 4.0
_CLIPPED_MEAN = 1.0 - math.exp(-OUTPUT_CLIP)


@dataclass(frozen=True)
class CostModelParams:
    prefill_efficiency: float = 0.5
    decode_bw_efficiency: float = 0.7
    pipeline_bubble_factor: float = 0.1
    comm_overhead_per_stage: float = 2e-3
    kv_memory_fraction: float = 0.9
    queueing_sim_requests: int = 2000
    queueing_sim_seed: int = 0

    def __post_init__(self):
        for name in ("prefill_efficiency", "decode_bw_efficiency", "kv_memory_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.pipeline_bubble_factor < 0 or self.comm_overhead_per_stage < 0:
            raise ValueError("bubble factor and comm overhead must be >= 0")
        if self.queueing_sim_requests < 1:
            raise ValueError("queueing_sim_requests must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CostModelParams":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown cost model parameters: {sorted(unknown)}")
        return cls(**known)

    @classmethod
    def load(cls, path: str | Path) -> "CostModelParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class ServiceTime(NamedTuple):
    prefill_s: float
    decode_per_token_s: float


class StageLatency(NamedTuple):
    latency_s: float  # INFEASIBLE (inf) when no stable plan exists
    best_plan: Optional[ParallelismPlan]


def memory_feasible(shape: ReplicaShape, model: ModelSpec, hw: HardwareSpec,
                    workload: Optional[WorkloadStats] = None,
                    kv_memory_fraction: float = 0.9) -> bool:
    """Weights sharded over tp*pp GPUs must fit, and what is left must hold
    the KV cache of one request at p95 sequence length (one token when no
    workload is given)."""
    g = shape.gpus
    weights = model.weight_bytes / g
    cap = float(hw.mem_capacity_per_gpu)
    if weights > cap:
        return False
    tokens = 1.0 if workload is None else workload.p95_input_tokens + workload.p95_output_tokens
    kv = model.kv_bytes_per_token * tokens / g
    return kv <= kv_memory_fraction * (cap - weights)


def feasible_shapes(model: ModelSpec, hw: HardwareSpec, max_gpus: int,
                    workload: Optional[WorkloadStats] = None,
                    kv_memory_fraction: float = 0.9) -> list[ReplicaShape]:
    """Shapes with power-of-two tp <= gpus_per_node, pp <= MAX_PP, tp*pp <= max_gpus."""
    out = []
    tp = 1
    while tp <= min(hw.gpus_per_node, max_gpus):
        for pp in range(1, MAX_PP + 1):
            s = ReplicaShape(tp, pp)
            if s.gpus <= max_gpus and memory_feasible(s, model, hw, workload, kv_memory_fraction):
                out.append(s)
        tp *= 2
    return out


def min_gpus(model: ModelSpec, hw: HardwareSpec) -> int:
    """Fewest GPUs any single replica of ``model`` needs (0 when it fits nowhere)."""
    shapes = feasible_shapes(model, hw, hw.gpus_per_node * MAX_PP)
    return min((s.gpus for s in shapes), default=0)


def with_min_gpus(model: ModelSpec, hw: HardwareSpec) -> ModelSpec:
    from dataclasses import replace
    return replace(model, min_gpus=max(1, min_gpus(model, hw)))


def _multisets(shapes: Sequence[ReplicaShape], budget: int, start: int = 0) -> Iterator[tuple]:
    """All non-empty multisets of ``shapes[start:]`` with total GPUs <= budget."""
    for k in range(start, len(shapes)):
        s = shapes[k]
        if s.gpus > budget:
            continue
        yield (s,)
        for rest in _multisets(shapes, budget - s.gpus, k):
            yield (s,) + rest


def _plans_from_shapes(shapes: Sequence[ReplicaShape], budget: int) -> list[ParallelismPlan]:
    ordered = sorted(set(shapes), key=lambda s: (-s.gpus, -s.tp))
    seen = set()
    plans = []
    for combo in _multisets(ordered, budget):
        p = ParallelismPlan(combo)
        if p not in seen:
            seen.add(p)
            plans.append(p)
    plans.sort(key=lambda p: (p.gpus_used, [(-r.gpus, -r.tp) for r in p.replicas]))
    return plans


def enumerate_plans(budget: int, model: ModelSpec, hw: HardwareSpec,
                    workload: Optional[WorkloadStats] = None,
                    params: Optional[CostModelParams] = None) -> list[ParallelismPlan]:
    """Every distinct multiset of memory-feasible replicas using at most
    ``budget`` GPUs.  Exhaustive, so the result grows quickly with budget."""
    if budget < 1:
        return []
    frac = (params or CostModelParams()).kv_memory_fraction
    return _plans_from_shapes(feasible_shapes(model, hw, budget, workload, frac), budget)


def prefill_time(shape: ReplicaShape, model: ModelSpec, input_tokens: float,
                 hw: HardwareSpec, params: CostModelParams) -> float:
    compute = 2.0 * model.param_count * input_tokens / (
        shape.gpus * hw.flops_per_gpu * params.prefill_efficiency)
    bubble = 1.0 + params.pipeline_bubble_factor * (shape.pp - 1)
    return (compute + shape.pp * params.comm_overhead_per_stage) * bubble


def decode_time(shape: ReplicaShape, model: ModelSpec, hw: HardwareSpec,
                params: CostModelParams) -> float:
    return (model.weight_bytes / (shape.tp * hw.mem_bandwidth_per_gpu * params.decode_bw_efficiency)
            + shape.pp * params.comm_overhead_per_stage)


def service_time(shape: ReplicaShape, model: ModelSpec, w: WorkloadStats,
                 hw: HardwareSpec, params: CostModelParams) -> ServiceTime:
    if not memory_feasible(shape, model, hw, w, params.kv_memory_fraction):
        raise ValueError(f"replica tp={shape.tp} pp={shape.pp} cannot hold {model.id}")
    return ServiceTime(prefill_time(shape, model, w.mean_input_tokens, hw, params),
                       decode_time(shape, model, hw, params))


@lru_cache(maxsize=64)
def _unit_draws(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    gaps = rng.standard_exponential(n)
    outs = np.minimum(rng.standard_exponential(n), OUTPUT_CLIP)
    gaps.setflags(write=False)
    outs.setflags(write=False)
    return gaps, outs


def pool_sojourn_times(groups: Sequence[tuple[int, float, float]], arrivals: Sequence[float],
                       outputs: Sequence[float]) -> list[float]:
    """FCFS replicas fed by least-expected-completion dispatch.

    ``groups`` holds ``(replica_count, prefill_s, decode_per_token_s)`` per
    distinct replica shape; each request goes to the replica that would
    finish it first.  Returns per-request sojourn times.
    """
    heaps = [[0.0] * n for n, _, _ in groups]
    svc = [(pre, dec) for _, pre, dec in groups]
    out = []
    for t, o in zip(arrivals, outputs):
        best_done = math.inf
        best_k = 0
        for k, heap in enumerate(heaps):
            free = heap[0]
            pre, dec = svc[k]
            done = (free if free > t else t) + pre + o * dec
            if done < best_done:
                best_done = done
                best_k = k
        heapq.heapreplace(heaps[best_k], best_done)
        out.append(best_done - t)
    return out


def percentile95(values) -> float:
    return float(np.percentile(np.asarray(values, dtype=float), 95))


def plan_groups(plan: ParallelismPlan, model: ModelSpec, w: WorkloadStats, hw: HardwareSpec,
                params: CostModelParams) -> list[tuple[int, float, float]]:
    counts: dict[ReplicaShape, int] = {}
    for r in plan.replicas:
        counts[r] = counts.get(r, 0) + 1
    return [(n, *service_time(s, model, w, hw, params)) for s, n in counts.items()]


def estimate_pool_p95(groups: Sequence[tuple[int, float, float]], arrival_rate: float,
                      mean_output_tokens: float, n_requests: int, seed: int,
                      deterministic: bool = False) -> float:
    """p95 sojourn time of a replica pool under Poisson arrivals.

    Output lengths are exponential with the given mean, clipped at
    ``OUTPUT_CLIP`` times the mean, or constant when ``deterministic``.  The
    unit draws depend only on ``(n_requests, seed)`` so estimates at
    different rates or for different plans share random numbers.
    """
    if arrival_rate <= 0:
        return 0.0
    gaps, outs = _unit_draws(n_requests, seed)
    arrivals = (np.cumsum(gaps) / arrival_rate).tolist()
    if deterministic:
        outputs = [float(mean_output_tokens)] * n_requests
    else:
        outputs = (outs * mean_output_tokens).tolist()
    return percentile95(pool_sojourn_times(groups, arrivals, outputs))


def pool_capacity(groups: Sequence[tuple[int, float, float]], mean_output_tokens: float,
                  deterministic: bool = False) -> float:
    """Requests/s the pool can sustain; offered load at or above this is unstable."""
    mean_out = mean_output_tokens * (1.0 if deterministic else _CLIPPED_MEAN)
    cap = 0.0
    for n, pre, dec in groups:
        s = pre + mean_out * dec
        cap += n / s if s > 0 else math.inf
    return cap


def _dominates(a: tuple, b: tuple) -> bool:
    (ga, pa, da), (gb, pb, db) = a, b
    return ga <= gb and pa <= pb and da <= db


def candidate_shapes(model: ModelSpec, w: WorkloadStats, hw: HardwareSpec,
                     params: CostModelParams, budget: int) -> list[ReplicaShape]:
    """Feasible shapes not dominated by another shape that needs no more
    GPUs and is no slower in both prefill and decode."""
    shapes = sorted(feasible_shapes(model, hw, budget, w, params.kv_memory_fraction),
                    key=lambda s: (s.gpus, -s.tp))
    keyed = [(s, (s.gpus, *service_time(s, model, w, hw, params))) for s in shapes]
    kept = []
    for k, (s, key) in enumerate(keyed):
        dominated = any(
            _dominates(other, key) and (other != key or j < k)
            for j, (_, other) in enumerate(keyed) if j != k)
        if not dominated:
            kept.append(s)
    return kept


_ROWS: dict[tuple, tuple[StageLatency, ...]] = {}


def planner_workers() -> int:
    """Worker processes for row precomputation, capped by CASCADE_PLANNER_THREADS."""
    n = os.cpu_count() or 1
    env = os.environ.get("CASCADE_PLANNER_THREADS")
    if env:
        n = min(n, max(1, int(env)))
    return n


def latency_row(budget: int, model: ModelSpec, w: WorkloadStats, hw: HardwareSpec,
                params: CostModelParams) -> tuple[StageLatency, ...]:
    """``stage_p95_latency`` for every allocation 0..budget in one pass.

    Plans are evaluated grouped by exact GPU count and the row is the
    running minimum, so entry ``f`` is the best over all candidates using
    at most ``f`` GPUs.  Rows are memoized per process.
    """
    key = (budget, model, w, hw, params)
    row = _ROWS.get(key)
    if row is None:
        row = _ROWS[key] = _compute_row(*key)
    return row


def precompute_rows(keys, workers: int | None = None) -> None:
    """Fill the row cache for ``(budget, model, workload, hw, params)`` keys,
    fanning out over processes when more than one worker is allowed."""
    missing = list(dict.fromkeys(k for k in keys if k not in _ROWS))
    workers = planner_workers() if workers is None else workers
    if workers > 1 and len(missing) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for k, row in zip(missing, ex.map(_compute_row_packed, missing, chunksize=4)):
                _ROWS[k] = row
    else:
        for k in missing:
            _ROWS[k] = _compute_row(*k)


def clear_row_cache() -> None:
    _ROWS.clear()


def _compute_row_packed(key):
    return _compute_row(*key)


def _compute_row(budget: int, model: ModelSpec, w: WorkloadStats, hw: HardwareSpec,
                 params: CostModelParams) -> tuple[StageLatency, ...]:
    if w.arrival_rate <= 0:
        shapes = feasible_shapes(model, hw, budget, w, params.kv_memory_fraction)
        row = [StageLatency(0.0, None)]
        for f in range(1, budget + 1):
            fits = [s for s in shapes if s.gpus <= f]
            smallest = min(fits, key=lambda s: (s.gpus, -s.tp), default=None)
            row.append(StageLatency(0.0, ParallelismPlan((smallest,)) if smallest else None))
        return tuple(row)

    shapes = candidate_shapes(model, w, hw, params, budget)
    service = {s: service_time(s, model, w, hw, params) for s in shapes}
    by_gpus: dict[int, list[ParallelismPlan]] = {}
    for p in _plans_from_shapes(shapes, budget):
        by_gpus.setdefault(p.gpus_used, []).append(p)

    _, unit_out = _unit_draws(params.queueing_sim_requests, params.queueing_sim_seed)
    outputs = unit_out * w.mean_output_tokens
    # p95 of the no-queueing service time on a replica of each shape; a pool's
    # sojourn p95 can never beat the best of these over its shapes.
    floor = {s: percentile95(pre + outputs * dec) for s, (pre, dec) in service.items()}

    row = [StageLatency(INFEASIBLE, None)]
    for g in range(1, budget + 1):
        best = row[-1]
        for p in by_gpus.get(g, ()):
            counts: dict[ReplicaShape, int] = {}
            for r in p.replicas:
                counts[r] = counts.get(r, 0) + 1
            if len(counts) == 1 and floor[p.replicas[0]] >= best.latency_s:
                continue
            groups = [(n, *service[s]) for s, n in counts.items()]
            if w.arrival_rate >= pool_capacity(groups, w.mean_output_tokens):
                continue
            if len(counts) > 1:
                per_request = np.min([pre + outputs * dec for _, pre, dec in groups], axis=0)
                if percentile95(per_request) >= best.latency_s:
                    continue
            lat = estimate_pool_p95(groups, w.arrival_rate, w.mean_output_tokens,
                                    params.queueing_sim_requests, params.queueing_sim_seed)
            if lat < best.latency_s:
                best = StageLatency(lat, p)
        row.append(best)
    return tuple(row)


def stage_p95_latency(budget: int, model: ModelSpec, w: WorkloadStats, hw: HardwareSpec,
                      params: CostModelParams) -> StageLatency:
    """Lowest estimated p95 latency over candidate plans using <= budget GPUs."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    return latency_row(budget, model, w, hw, params)[budget]
