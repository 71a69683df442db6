"""EST against the NS baseline on the standard synthetic benchmark.

Prints teacher, best and final mean test accuracy per generator seed.
"""

import argparse

from selftrain.data import GeneratorConfig, generate_gaussian_dataset
from selftrain.pipeline import preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--benchmark-seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--presets", nargs="+", default=["EST", "NS"])
    args = ap.parse_args()
    print("benchmark\tpreset\tteacher\tbest\tfinal")
    for g in args.benchmark_seeds:
        split = generate_gaussian_dataset(GeneratorConfig(seed=g))
        for name in args.presets:
            rep = run_experiment(preset(name), split, args.seeds)
            print(f"{g}\t{name}\t{rep.mean_teacher_test():.4f}\t{rep.best_mean_test()[1]:.4f}\t"
                  f"{rep.final_mean_test():.4f}", flush=True)


if __name__ == "__main__":
    main()
