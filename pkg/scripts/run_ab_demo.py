#!/usr/bin/env python3
"""A/B demo: baseline vs oracle best-of-4 vs a scorer trained in-simulator.

Trains the third arm's scorer on pseudo-labeled baseline logs (continuation
AND not-retried), then runs a three-arm experiment and prints the per-arm
metrics and relative improvements.
"""

import argparse
import json

from engage.labeler import LabelStrategy
from engage.simverse import Policy, Population, UserModel, run_ab, train_policy_scorer


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--users", type=int, default=1500, help="users per arm")
    parser.add_argument("--horizon", type=int, default=31, help="days simulated")
    parser.add_argument("--train-conversations", type=int, default=1200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", action="store_true", help="machine output")
    args = parser.parse_args()

    model = UserModel()
    scorer = train_policy_scorer(model, LabelStrategy("intersection", k=2),
                                 args.train_conversations, seed=args.seed)
    arms = {
        "baseline": Policy(),
        "oracle_best4": Policy(n=4, scorer="oracle"),
        "trained_best4": Policy(n=4, scorer="trained", trained_model=scorer),
    }
    report = run_ab(arms, "baseline", Population(args.users, model),
                    horizon_days=args.horizon, rng_seed=args.seed, n_boot=200)
    doc = report.to_dict()
    if args.json:
        print(json.dumps(doc, indent=2))
        return
    last_day = None
    for name, arm in doc["arms"].items():
        tag = " (baseline)" if name == doc["baseline"] else ""
        last_day = arm["retention_days"][-1]
        print(f"{name}{tag}: MCL {arm['mcl']['value']:.3f} "
              f"retry {arm['retry_rate']['value']:.4f} "
              f"day-{last_day} retention {arm['retention_fractions'][-1]:.4f}")
    for name, imps in doc["improvements"].items():
        mcl = imps["mcl"]
        ret = imps.get(f"retention_day_{last_day}")
        line = f"{name}: MCL {mcl['value']:+.2f}% ± {mcl['stderr']:.2f}"
        if ret:
            line += (f", day-{last_day} retention {ret['value']:+.2f}%"
                     f" ± {ret['stderr']:.2f}")
        print(line)


if __name__ == "__main__":
    main()
