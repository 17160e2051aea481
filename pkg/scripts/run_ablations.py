#!/usr/bin/env python3
"""Sampling and loss ablations over several seeds: full hybrid vs
impressions-only sampling, and vs the single-component losses.

    python scripts/run_ablations.py --seeds 1 2 3 --small
"""

import argparse
import json
import sys
import time

sys.path.insert(0, "src")

from prerank.experiments import (
    ABLATION_VARIANTS,
    FULL_EXPERIMENT,
    SMALL_EXPERIMENT,
    run_ablations,
    seed_mean,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--small", action="store_true", help="use the small 600-item world")
    parser.add_argument("--variants", nargs="+", choices=sorted(ABLATION_VARIANTS), default=None)
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()

    base = SMALL_EXPERIMENT if args.small else FULL_EXPERIMENT
    t0 = time.time()
    results = run_ablations(base, args.seeds, args.variants)

    table = {
        name: {
            "recall": seed_mean(rs, "recall"),
            "ndcg": seed_mean(rs, "ndcg"),
            "per_seed": [r.summary() for r in rs],
        }
        for name, rs in results.items()
    }
    if args.json:
        print(json.dumps(table, indent=2, sort_keys=True))
    else:
        print(f"{'variant':<24}{'recall@k':>10}{'ndcg@k':>10}   (seed-mean over {args.seeds})")
        for name, row in table.items():
            print(f"{name:<24}{row['recall']:>10.4f}{row['ndcg']:>10.4f}")
        print(f"\n{time.time() - t0:.0f}s total")
    return 0


if __name__ == "__main__":
    sys.exit(main())
