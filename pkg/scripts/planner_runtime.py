"""Wall-clock time of the full planning sweep for growing clusters.

    python scripts/planner_runtime.py --gpus 16,32,64 --requests 2000
"""

import argparse
import dataclasses
import time

from cascade_planner.config import load_config
from cascade_planner.costmodel import clear_row_cache, with_min_gpus
from cascade_planner.outerplan import sweep
from cascade_planner.tracegen import TraceSpec, generate_trace


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/deepseek_cascade.json")
    ap.add_argument("--gpus", default="16,32,64")
    ap.add_argument("--requests", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(args.config)
    print("gpus\trate\tcandidates\tfront\tseconds")
    for n in (int(x) for x in args.gpus.split(",")):
        hw = dataclasses.replace(cfg.hardware, gpu_count=n)
        models = [with_min_gpus(m, hw) for m in cfg.models]
        rate = 0.5 * n / 32  # keep per-GPU load fixed
        trace = generate_trace(TraceSpec(count=args.requests, rate=rate, input_mean=256,
                                         output_means=(256.0,) * 3, score_means=(70.0, 80.0, 88.0),
                                         score_stds=(20.0, 12.0, 6.0), seed=args.seed))
        clear_row_cache()
        start = time.perf_counter()
        res = sweep(trace, models, hw, cfg.cost_model, grid=cfg.sweep)
        elapsed = time.perf_counter() - start
        print(f"{n}\t{rate:g}\t{len(res.evaluations)}\t{len(res.front)}\t{elapsed:.1f}")


if __name__ == "__main__":
    main()
