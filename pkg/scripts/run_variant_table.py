#!/usr/bin/env python3
"""Article-aware vs fact-only comparison on a shared synthetic corpus:
per-seed test macro/micro F1 and medians."""

import argparse
from statistics import median

from lexadapt.experiments import run_variant_comparison


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--docs", type=int, default=320)
    parser.add_argument("--strength", type=float, default=0.9)
    args = parser.parse_args()
    results = run_variant_comparison(seeds=range(args.seeds),
                                     num_docs=args.docs,
                                     strength=args.strength)
    print(f"{'variant':<16} {'seed':>4} {'test mac.':>10} {'test mic.':>10}")
    for variant, runs in results.items():
        for seed, r in enumerate(runs):
            print(f"{variant:<16} {seed:>4} {100 * r.test_macro_f1:>10.2f} "
                  f"{100 * r.test_micro_f1:>10.2f}")
    for variant, runs in results.items():
        mac = median(r.test_macro_f1 for r in runs)
        mic = median(r.test_micro_f1 for r in runs)
        print(f"median {variant:<16} macro {100 * mac:.2f} micro {100 * mic:.2f}")


if __name__ == "__main__":
    main()
