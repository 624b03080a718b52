#!/usr/bin/env python3
"""Zero-shot transfer study on a covariate-shifted synthetic split:
source-only baseline vs UDA/ADA adaptation, source and target F1 per seed
plus medians, in the source/target table layout."""

import argparse
from statistics import median

from lexadapt.experiments import run_zero_shot_transfer


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--docs", type=int, default=320)
    parser.add_argument("--epochs", type=int, default=32)
    parser.add_argument("--gamma", type=float, default=2.0)
    parser.add_argument("--ada", action="store_true",
                        help="also run the ADA (no target data) variants")
    args = parser.parse_args()
    models = ["source_only", "uda_disc", "uda_wass"]
    if args.ada:
        models += ["ada_disc", "ada_wass"]
    results = run_zero_shot_transfer(
        seeds=range(args.seeds), num_docs=args.docs, max_epochs=args.epochs,
        gamma=args.gamma, models=models)
    header = (f"{'model':<14} {'src mac.':>9} {'src mic.':>9} "
              f"{'tgt mac.':>9} {'tgt mic.':>9}")
    print(header)
    print("-" * len(header))
    for name in models:
        runs = results[name]
        row = [median(r.source_macro_f1 for r in runs),
               median(r.source_micro_f1 for r in runs),
               median(r.target_macro_f1 for r in runs),
               median(r.target_micro_f1 for r in runs)]
        print(f"{name:<14} " + " ".join(f"{100 * v:>9.2f}" for v in row))
    base = median(r.target_micro_f1 for r in results["source_only"])
    for name in models[1:]:
        gain = median(r.target_micro_f1 for r in results[name]) - base
        print(f"{name}: target micro-F1 gain over source-only "
              f"{100 * gain:+.2f} (median over {args.seeds} seeds)")


if __name__ == "__main__":
    main()
