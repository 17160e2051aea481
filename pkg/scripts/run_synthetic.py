#!/usr/bin/env python3
"""Train the full model on the seed-fixed synthetic world and report test
metrics next to the oracle scorer. The library twin of the CLI pipeline
(gen-data -> train -> eval), handy for quick experiments.

    python scripts/run_synthetic.py --seed 1 --steps 600
    python scripts/run_synthetic.py --small        # 600-item desk world
"""

import argparse
import json
import sys
import time
from dataclasses import replace

sys.path.insert(0, "src")

from prerank.experiments import FULL_EXPERIMENT, SMALL_EXPERIMENT, run_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--steps", type=int, default=None, help="override the training step budget")
    parser.add_argument("--small", action="store_true", help="use the small 600-item world")
    parser.add_argument("--json", action="store_true", help="emit the summary as JSON")
    args = parser.parse_args()

    config = SMALL_EXPERIMENT if args.small else FULL_EXPERIMENT
    if args.steps is not None:
        config = replace(config, train=replace(config.train, max_steps=args.steps))

    t0 = time.time()
    result = run_experiment(config, args.seed)
    elapsed = time.time() - t0

    summary = result.summary()
    summary["seconds"] = round(elapsed, 1)
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(f"seed {args.seed}: trained {result.steps} steps in {elapsed:.0f}s")
        print(f"  untrained recall@k  {result.untrained.recall:.4f}")
        print(f"  trained   recall@k  {result.trained.recall:.4f}   ndcg@k {result.trained.ndcg:.4f}")
        print(f"  oracle    recall@k  {result.oracle.recall:.4f}   ndcg@k {result.oracle.ndcg:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
