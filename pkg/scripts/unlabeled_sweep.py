"""EST accuracy as the unlabeled pool grows, with 100 labeled examples."""

import argparse

from selftrain.data import GeneratorConfig, generate_gaussian_dataset
from selftrain.pipeline import preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000, 4000])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--preset", default="EST")
    args = ap.parse_args()
    print("n_unlabeled\tteacher\tbest\tfinal")
    for n in args.sizes:
        rep = run_experiment(preset(args.preset), generate_gaussian_dataset(GeneratorConfig(n_unlabeled=n)), args.seeds)
        print(f"{n}\t{rep.mean_teacher_test():.4f}\t{rep.best_mean_test()[1]:.4f}\t{rep.final_mean_test():.4f}",
              flush=True)


if __name__ == "__main__":
    main()
