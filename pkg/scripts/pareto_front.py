"""Print the latency/quality front and the weight-ladder selections for a trace.

    python scripts/pareto_front.py --config configs/deepseek_cascade.json --trace trace.jsonl
"""

import argparse

from cascade_planner.config import load_config
from cascade_planner.domain import read_trace
from cascade_planner.outerplan import sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--trace", required=True)
    args = ap.parse_args()

    cfg = load_config(args.config)
    res = sweep(read_trace(args.trace, len(cfg.models)), cfg.models, cfg.hardware,
                cfg.cost_model, grid=cfg.sweep)
    print(f"utopia: latency {res.utopia.z1_star:.3f} s, quality {res.utopia.z2_star:.2f}")
    print("latency_s\tquality\tthresholds\tallocations\tratios")
    for p in res.front.points:
        plan = p.plan_ref
        print(f"{p.latency_s:.3f}\t{p.quality:.2f}\t{p.thresholds.thresholds}\t"
              f"{list(plan.allocations)}\t{[round(r, 3) for r in plan.processing_ratios]}")
    print("\nlambda1/lambda2\tlatency_s\tquality")
    for w, p in res.selections:
        print(f"{w.lambda1 / w.lambda2:.3g}\t{p.latency_s:.3f}\t{p.quality:.2f}")


if __name__ == "__main__":
    main()
