"""Cascade plan vs. the largest model alone, across arrival rates.

Builds a two-stage trace where a fixed share of requests is answered well
by the small model, plans the cascade with a quality floor equal to the
large model's score, and replays both deployments against the same SLO base.

    python scripts/cascade_vs_standalone.py --rates 0.4,0.8,1.2,1.6 --gpus 8
"""

import argparse
import logging

import numpy as np

from cascade_planner.costmodel import (CostModelParams, enumerate_plans, plan_groups,
                                       pool_capacity, with_min_gpus)
from cascade_planner.domain import (CascadePlan, HardwareSpec, ModelSpec, RoutingThresholds,
                                    StageResult, TraceRecord)
from cascade_planner.outerplan import select_plan, sweep
from cascade_planner.routing import route_trace
from cascade_planner.simulator import SimConfig, no_contention_latency, run


def build_trace(n, rate, easy_share, seed):
    rng = np.random.default_rng(seed)
    arrivals = np.cumsum(rng.exponential(1 / rate, n))
    inputs = np.maximum(1, np.rint(rng.exponential(256, n))).astype(int)
    outputs = np.maximum(1, np.rint(rng.exponential(128, (n, 2)))).astype(int)
    easy = rng.random(n) < easy_share
    return [TraceRecord(float(arrivals[k]), int(inputs[k]),
                        (StageResult(int(outputs[k, 0]), 95.0 if easy[k] else 40.0),
                         StageResult(int(outputs[k, 1]), 92.0)))
            for k in range(n)]


def standalone_plan(trace, model, hw, params):
    w = route_trace(trace, RoutingThresholds((101.0,))).stage_workloads[1]
    best = max(enumerate_plans(hw.gpu_count, model, hw, w, params),
               key=lambda p: (pool_capacity(plan_groups(p, model, w, hw, params),
                                            w.mean_output_tokens), -p.gpus_used))
    return CascadePlan((hw.gpu_count,), (best,), RoutingThresholds(()), 0.0, 92.0, (1.0,))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", default="0.4,0.8,1.2,1.6")
    ap.add_argument("--gpus", type=int, default=8)
    ap.add_argument("--requests", type=int, default=2000)
    ap.add_argument("--easy-share", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    hw = HardwareSpec(args.gpus, 989e12, 3.35e12, 80e9, 450e9, 50e9, 8)
    models = [with_min_gpus(ModelSpec("small-7b", 7e9, 2.0, 57344, 1), hw),
              with_min_gpus(ModelSpec("large-70b", 70e9, 2.0, 327680, 2), hw)]
    params = CostModelParams(queueing_sim_seed=args.seed)

    print("rate\tcascade_alloc\tcascade_scale95\tcascade_rps\tsolo_plan\tsolo_scale95\tsolo_rps")
    for rate in (float(r) for r in args.rates.split(",")):
        trace = build_trace(args.requests, rate, args.easy_share, args.seed)
        cascade = select_plan(sweep(trace, models, hw, params).front, min_quality=92.0)
        solo = standalone_plan(trace, models[1], hw, params)
        solo_trace = [TraceRecord(r.arrival_s, r.input_tokens, r.per_stage[1:]) for r in trace]
        cfg = SimConfig(seed=args.seed,
                        slo_base_s=no_contention_latency(cascade, trace, models, hw, params))
        a = run(cascade, trace, models, hw, params, cfg)
        b = run(solo, solo_trace, models[1:], hw, params, cfg)
        print(f"{rate:g}\t{list(cascade.allocations)}\t{a.min_scale_95}\t{a.throughput_rps:.3f}"
              f"\t{solo.plans[0].describe()}\t{b.min_scale_95}\t{b.throughput_rps:.3f}")


if __name__ == "__main__":
    main()
