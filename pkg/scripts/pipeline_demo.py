#!/usr/bin/env python3
"""End-to-end pipeline demo on synthetic logs.

Simulates baseline conversation logs, extracts response rows, applies a
pseudo-label strategy, trains the hashed-feature scorer, evaluates it on a
held-out log sample, and saves the model file.
"""

import argparse

from engage.convlog import extract_rows
from engage.labeler import LabelStrategy, apply_strategy
from engage.reward import FeaturizerConfig, TrainConfig, evaluate, save_model, train
from engage.simverse import Policy, UserModel, simulate_many


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--conversations", type=int, default=1500)
    parser.add_argument("--strategy", default="intersection",
                        choices=["continuation", "retry", "star", "intersection"])
    parser.add_argument("--k", type=int, default=2)
    parser.add_argument("--s", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--model-out", default="demo_model.npz")
    args = parser.parse_args()

    strategy = LabelStrategy(
        args.strategy,
        k=args.k if args.strategy in ("continuation", "intersection") else None,
        s=args.s if args.strategy == "star" else None)

    model = UserModel()
    convs, _ = simulate_many(model, Policy(), args.conversations, seed=args.seed)
    holdout, _ = simulate_many(model, Policy(), args.conversations // 4,
                               seed=args.seed + 1)
    rows = [r for c in convs for r in extract_rows(c)]
    labeled = apply_strategy(rows, strategy)
    pos = sum(lr.label for lr in labeled)
    print(f"{len(labeled)} labeled rows ({strategy.describe()}), "
          f"positive rate {pos / len(labeled):.3f}")

    cfg = TrainConfig(
        featurizer=FeaturizerConfig(token_orders=(1, 2), char_orders=(),
                                    hash_dimension=1 << 14),
        epochs=5, context_budget=128, seed=args.seed)
    scorer = train(labeled, cfg)
    meta = scorer.training_meta
    print(f"trained: chose epoch {meta['chosen_epoch']} of {meta['epochs_run']}, "
          f"val loss {meta['val_loss_by_epoch'][meta['chosen_epoch'] - 1]:.4f}")

    holdout_rows = [r for c in holdout for r in extract_rows(c)]
    holdout_labeled = apply_strategy(holdout_rows, strategy)
    report = evaluate(scorer, holdout_labeled)
    auc = "undefined" if report["auc"] is None else f"{report['auc']:.4f}"
    print(f"held-out: n={report['n']} accuracy={report['accuracy']:.4f} "
          f"auc={auc} log_loss={report['log_loss']:.4f}")

    save_model(scorer, args.model_out)
    print(f"model written to {args.model_out}")


if __name__ == "__main__":
    main()
