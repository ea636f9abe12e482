import itertools
import math

import hypothesis
import pytest

from cascade_planner.costmodel import CostModelParams, with_min_gpus
from cascade_planner.domain import HardwareSpec, ModelSpec, StageResult, TraceRecord

hypothesis.settings.register_profile("ci", deadline=None, print_blob=True)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile("ci")


H100 = dict(flops_per_gpu=989e12, mem_bandwidth_per_gpu=3.35e12, mem_capacity_per_gpu=80e9,
            intra_node_bw=450e9, inter_node_bw=50e9, gpus_per_node=8)


def h100_cluster(n):
    return HardwareSpec(gpu_count=n, **H100)


def deepseek_models(hw):
    raw = [ModelSpec("deepseek-7b", 7e9, 2.0, 57344, 1),
           ModelSpec("deepseek-70b", 70e9, 2.0, 327680, 2),
           ModelSpec("deepseek-671b-int4", 671e9, 0.5, 70272, 3)]
    return [with_min_gpus(m, hw) for m in raw]


def make_trace(scores, outputs=None, inputs=None, gap=1.0):
    """Trace with evenly spaced arrivals; ``scores[k]`` lists one score per stage."""
    n = len(scores)
    C = len(scores[0])
    outputs = outputs or [[100] * C for _ in range(n)]
    inputs = inputs or [200] * n
    return [TraceRecord(k * gap, inputs[k],
                        tuple(StageResult(outputs[k][i], float(scores[k][i])) for i in range(C)))
            for k in range(n)]


@pytest.fixture
def hw32():
    return h100_cluster(32)


@pytest.fixture
def models3(hw32):
    return deepseek_models(hw32)


@pytest.fixture
def params():
    return CostModelParams()


def random_table_rows(rng, C, N, p_masked=0.25, ties=False):
    """Random latency rows (index 0..N); masked cells are inf.  ``ties`` draws
    from a handful of values so equal objectives are common."""
    rows = []
    for _ in range(C):
        if ties:
            row = [float(rng.integers(1, 6)) for _ in range(N + 1)]
        else:
            row = [float(x) for x in rng.uniform(0.1, 10.0, N + 1)]
        row = [math.inf if rng.random() < p_masked else v for v in row]
        if rng.random() < 0.7:
            row[0] = math.inf
        rows.append(row)
    return rows


def compositions_oracle(rows, N):
    """Exhaustive min over (f_1..f_C), sum = N, of max latency, lexicographic
    tie-break.  Returns (objective, allocation) or None."""
    best = None
    C = len(rows)
    for alloc in itertools.product(range(N + 1), repeat=C - 1):
        last = N - sum(alloc)
        if last < 0:
            continue
        full = alloc + (last,)
        obj = max(rows[i][f] for i, f in enumerate(full))
        if math.isinf(obj):
            continue
        if best is None or obj < best[0]:
            best = (obj, full)
    return best


def route_by_hand(trace, thresholds):
    """Per-request loop: returns (ratios, quality, accept stages 1-based)."""
    C = len(trace[0].per_stage)
    reached = [0] * C
    scores, stages = [], []
    for r in trace:
        for i in range(C):
            reached[i] += 1
            if i == C - 1 or r.per_stage[i].score >= thresholds[i]:
                scores.append(r.per_stage[i].score)
                stages.append(i + 1)
                break
    n = len(trace)
    return [c / n for c in reached], math.fsum(scores) / n, stages


def pareto_oracle(pairs):
    """O(n^2) non-dominated (latency, quality) pairs, deduplicated, by latency."""
    keep = set()
    for a in pairs:
        dominated = any(b[0] <= a[0] and b[1] >= a[1] and b != a for b in pairs)
        if not dominated:
            keep.add(a)
    return sorted(keep)


def two_stage_setup(n_gpus=8, n=400, seed=0, rate=0.6):
    from cascade_planner.costmodel import CostModelParams
    from cascade_planner.tracegen import TraceSpec, generate_trace

    hw = h100_cluster(n_gpus)
    models = deepseek_models(hw)[:2]
    trace = generate_trace(TraceSpec(count=n, rate=rate, input_mean=256,
                                     output_means=(128.0, 128.0), score_means=(70.0, 85.0),
                                     score_stds=(20.0, 10.0), seed=seed))
    return trace, models, hw, CostModelParams(queueing_sim_requests=500)


def md1_setup(count=10_000, rate=2.0, seed=0):
    """One model, one GPU, every request served in exactly 0.1 s."""
    from cascade_planner.costmodel import CostModelParams
    from cascade_planner.domain import CascadePlan, ParallelismPlan, ReplicaShape, RoutingThresholds
    from cascade_planner.tracegen import TraceSpec, generate_trace

    hw = HardwareSpec(1, 2e12, 1e12, 80e9, 1e11, 1e10, 8)
    model = ModelSpec("unit", 1e9, 2.0, 0.0, 1)
    params = CostModelParams(prefill_efficiency=0.5, comm_overhead_per_stage=0.0)
    trace = generate_trace(TraceSpec(count=count, rate=rate, input_mean=50, output_means=(0.0,),
                                     score_means=(50.0,), score_stds=(0.0,),
                                     length_dist="constant", seed=seed))
    plan = CascadePlan((1,), (ParallelismPlan((ReplicaShape(1, 1),)),), RoutingThresholds(()),
                       0.1, 50.0, (1.0,))
    return plan, trace, [model], hw, params
