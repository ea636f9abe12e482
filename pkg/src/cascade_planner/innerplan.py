"""GPU allocation across cascade stages minimizing the worst stage p95.

Every stage picks exactly one GPU count from a precomputed latency table and
the counts must add up to the cluster size.  The solver binary-searches the
objective over the distinct table values; each probe is a reachability DP
over (stage, GPUs used), which keeps it exact for arbitrary tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .costmodel import INFEASIBLE, CostModelParams, latency_row
from .domain import (HardwareSpec, ModelSpec, ParallelismPlan, PlannerError,
                     WorkloadStats)


@dataclass(frozen=True)
class LatencyTable:
    """``entries[i][f]`` is stage ``i``'s latency with ``f`` GPUs (inf = masked)."""

    entries: tuple[tuple[float, ...], ...]
    plans: tuple[tuple[Optional[ParallelismPlan], ...], ...]

    @property
    def n_stages(self) -> int:
        return len(self.entries)

    @property
    def max_gpus(self) -> int:
        return len(self.entries[0]) - 1 if self.entries else 0

    def feasible(self, i: int, f: int) -> bool:
        return f < len(self.entries[i]) and self.entries[i][f] != INFEASIBLE

    def to_dict(self) -> dict:
        return {
            "entries": [[None if v == INFEASIBLE else v for v in row] for row in self.entries],
            "plans": [[p.to_dict() if p is not None else None for p in row] for row in self.plans],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyTable":
        entries = tuple(tuple(INFEASIBLE if v is None else float(v) for v in row)
                        for row in d["entries"])
        plans = tuple(tuple(ParallelismPlan.from_dict(p) if p is not None else None for p in row)
                      for row in d["plans"])
        return cls(entries, plans)

    @classmethod
    def from_latencies(cls, rows: Sequence[Sequence[float]]) -> "LatencyTable":
        """Table without parallelism plans, for hand-built or random instances."""
        entries = tuple(tuple(float(v) for v in row) for row in rows)
        return cls(entries, tuple((None,) * len(row) for row in entries))

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> "LatencyTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class AllocationSolution:
    allocations: tuple[int, ...]
    objective_L: float
    per_stage_latency: tuple[float, ...]
    per_stage_plan: tuple[Optional[ParallelismPlan], ...]


def build_latency_table(workloads: Sequence[WorkloadStats], models: Sequence[ModelSpec],
                        hw: HardwareSpec, params: CostModelParams,
                        n_gpus: Optional[int] = None) -> LatencyTable:
    if len(workloads) != len(models):
        raise ValueError("need one workload per model")
    n = hw.gpu_count if n_gpus is None else n_gpus
    entries, plans = [], []
    for m, w in zip(models, workloads):
        row = latency_row(n, m, w, hw, params)
        entries.append(tuple(c.latency_s for c in row))
        plans.append(tuple(c.best_plan for c in row))
    return LatencyTable(tuple(entries), tuple(plans))


def _allowed(table: LatencyTable, bound: float, n: int) -> list[list[int]]:
    return [[f for f in range(min(n, len(row) - 1) + 1)
             if row[f] != INFEASIBLE and row[f] <= bound]
            for row in table.entries]


def _suffix_reachable(allowed: list[list[int]], n: int) -> list[list[bool]]:
    """reach[i][r]: stages i.. can use exactly r GPUs."""
    C = len(allowed)
    reach = [[False] * (n + 1) for _ in range(C + 1)]
    reach[C][0] = True
    for i in range(C - 1, -1, -1):
        nxt, cur = reach[i + 1], reach[i]
        for f in allowed[i]:
            for r in range(f, n + 1):
                if nxt[r - f]:
                    cur[r] = True
    return reach


def solve_min_max(table: LatencyTable, n_gpus: int) -> AllocationSolution:
    """Exact min over allocations (sum = n_gpus) of the max stage latency.

    Among optimal allocations the lexicographically smallest is returned.
    Raises ``PlannerError('INFEASIBLE_PROBLEM')`` if no allocation exists.
    """
    C = table.n_stages
    if C == 0:
        raise PlannerError("INFEASIBLE_PROBLEM", "empty latency table")
    values = sorted({v for row in table.entries for v in row[: n_gpus + 1] if v != INFEASIBLE})

    def ok(bound: float) -> bool:
        return _suffix_reachable(_allowed(table, bound, n_gpus), n_gpus)[0][n_gpus]

    if not values or not ok(values[-1]):
        raise PlannerError("INFEASIBLE_PROBLEM",
                           f"no allocation of {n_gpus} GPUs gives every stage a feasible cell")
    lo, hi = 0, len(values) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(values[mid]):
            hi = mid
        else:
            lo = mid + 1
    best = values[lo]

    allowed = _allowed(table, best, n_gpus)
    reach = _suffix_reachable(allowed, n_gpus)
    alloc, left = [], n_gpus
    for i in range(C):
        f = next(f for f in allowed[i] if f <= left and reach[i + 1][left - f])
        alloc.append(f)
        left -= f
    lat = tuple(table.entries[i][f] for i, f in enumerate(alloc))
    return AllocationSolution(tuple(alloc), max(lat), lat,
                              tuple(table.plans[i][f] for i, f in enumerate(alloc)))


def brute_force_min_max(table: LatencyTable, n_gpus: int) -> AllocationSolution:
    """Exhaustive reference: every composition of n_gpus into C parts."""
    C = table.n_stages
    best = None

    def rec(i, left, prefix):
        nonlocal best
        if i == C - 1:
            comp = prefix + [left]
            if all(table.feasible(k, f) for k, f in enumerate(comp)):
                obj = max(table.entries[k][f] for k, f in enumerate(comp))
                if best is None or obj < best[0]:
                    best = (obj, comp)
            return
        for f in range(left + 1):
            rec(i + 1, left - f, prefix + [f])

    rec(0, n_gpus, [])
    if best is None:
        raise PlannerError("INFEASIBLE_PROBLEM", "no feasible composition")
    obj, alloc = best
    lat = tuple(table.entries[i][f] for i, f in enumerate(alloc))
    return AllocationSolution(tuple(alloc), obj, lat,
                              tuple(table.plans[i][f] for i, f in enumerate(alloc)))


def _num(v: float) -> str:
    return repr(float(v))


def export_milp(table: LatencyTable, n_gpus: int) -> str:
    """The min-max assignment MILP in CPLEX LP format.

    Binary ``x_i_f`` exists only for feasible cells; masked cells simply have
    no variable, which is the same as fixing them to zero.
    """
    cells = [[f for f in range(min(n_gpus, len(row) - 1) + 1) if row[f] != INFEASIBLE]
             for row in table.entries]
    lines = ["\\ min-max GPU allocation across cascade stages",
             "Minimize", " obj: L", "Subject To"]
    for i, fs in enumerate(cells, start=1):
        terms = " + ".join(f"x_{i}_{f}" for f in fs) if fs else "0 L"
        lines.append(f" assign_{i}: {terms} = 1")
    budget = [f"{f} x_{i}_{f}" for i, fs in enumerate(cells, start=1) for f in fs if f > 0]
    lines.append(f" budget: {' + '.join(budget) if budget else '0 L'} = {n_gpus}")
    for i, fs in enumerate(cells, start=1):
        row = table.entries[i - 1]
        terms = "".join(f" - {_num(row[f])} x_{i}_{f}" for f in fs)
        lines.append(f" latency_{i}: L{terms} >= 0")
    lines += ["Bounds", " L >= 0", "Binary"]
    lines += [f" x_{i}_{f}" for i, fs in enumerate(cells, start=1) for f in fs]
    lines.append("End")
    return "\n".join(lines) + "\n"
