"""EST with and without open-set filtering when half the pool is non-target.

Also audits the filter against the hidden origins of the pool.
"""

import argparse

from selftrain.data import GeneratorConfig, generate_gaussian_dataset
from selftrain.pipeline import open_set_keep, preset, run_self_training


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--separation", type=float, default=8.0)
    ap.add_argument("--threshold", type=float, default=0.9, help="CDF threshold for the audit")
    args = ap.parse_args()
    split = generate_gaussian_dataset(GeneratorConfig(num_nontarget_classes=2,
                                                      nontarget_separation=args.separation))
    nontarget = split.unlabeled.origin >= split.num_target_classes
    print("seed\tnon_target_rejected\ttarget_retained\tunfiltered\tfiltered\tchosen_cdf")
    for s in args.seeds:
        plain = run_self_training(split, preset("EST"), s)
        filtered = run_self_training(split, preset("EST", open_set_filter=True), s)
        keep = open_set_keep(filtered.teacher, split, split.unlabeled.features, args.threshold)
        print(f"{s}\t{(~keep[nontarget]).mean():.4f}\t{keep[~nontarget].mean():.4f}\t"
              f"{plain.records[-1].test_acc:.4f}\t{filtered.records[-1].test_acc:.4f}\t{filtered.cdf_threshold}",
              flush=True)


if __name__ == "__main__":
    main()
