"""The six left/right ablation pairs that build EST from NS, one axis at a time."""

import argparse

from selftrain.data import GeneratorConfig, generate_gaussian_dataset
from selftrain.pipeline import preset, run_experiment

PAIRS = [(f"Exp{i}-left", f"Exp{i}-right") for i in range(1, 7)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--benchmark-seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    split = generate_gaussian_dataset(GeneratorConfig(seed=args.benchmark_seed))
    print("pair\tleft\tright\tright-left")
    for left, right in PAIRS:
        a = run_experiment(preset(left), split, args.seeds).best_mean_test()[1]
        b = run_experiment(preset(right), split, args.seeds).best_mean_test()[1]
        print(f"{left[:-5]}\t{a:.4f}\t{b:.4f}\t{b - a:+.4f}", flush=True)


if __name__ == "__main__":
    main()
