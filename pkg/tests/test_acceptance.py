"""End-to-end acceptance suite: one test per criterion, each timed.

Every test records a one-line verdict that is printed in the terminal summary.
The trend criteria train real models and take a few minutes in total.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from oracles import beta_cdf_simpson, central_difference, ece_bruteforce, threshold_bruteforce
from selftrain import model as mdl
from selftrain import report
from selftrain.calibration import ece, fit_temperature, scale_logits
from selftrain.data import GeneratorConfig, generate_gaussian_dataset
from selftrain.model import Batch, Classifier, LossMode, Tier
from selftrain.openset import beta_cdf, fit_beta_moments
from selftrain.pipeline import open_set_keep, preset, run_experiment, run_self_training
from selftrain.sampling import SplitBatchConfig, compute_sample_weights, split_batches
from selftrain.selection import THRESHOLD_GRID, PredictionBatch, select_entropy_threshold

GOLDEN = Path(__file__).parent / "golden" / "est_standard_report.txt"
BENCHMARK_SEEDS = (0, 1, 2)
RUN_SEEDS = (0, 1, 2)


def standard_split(seed=0, **kw):
    return generate_gaussian_dataset(GeneratorConfig(seed=seed, **kw))


def golden_report_text():
    split = standard_split(0)
    rep = run_experiment(preset("EST"), split, RUN_SEEDS, [("generator", "standard benchmark, seed 0")])
    return report.render(rep)


def test_1_ece_oracle(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        n, k = int(rng.integers(1, 51)), int(rng.integers(2, 6))
        bins = int(rng.choice([2, 5, 15]))
        logits = rng.normal(size=(n, k)) * rng.uniform(0.1, 5)
        labels = rng.integers(0, k, n)
        worst = max(worst, abs(ece(logits, labels, bins) - ece_bruteforce(mdl.softmax(logits), labels, bins)))
    elapsed = time.perf_counter() - start
    ok = criterion(1, worst < 1e-12 and elapsed < 1.0, f"ECE max |diff| {worst:.1e} over 200 instances, {elapsed:.2f}s")
    assert ok


def test_2_entropy_threshold_oracle(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    agree = 0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        logits = rng.normal(size=(n, 4)) * rng.uniform(0.5, 4)
        labels = rng.integers(0, 4, n)
        pb = PredictionBatch.from_logits(logits, tau=float(rng.choice([0.5, 1.0, 2.0])))
        correct = pb.argmax_class == labels
        if correct.all() or not correct.any():
            labels[0] = (pb.argmax_class[0] + int(correct[0])) % 4
            correct = pb.argmax_class == labels
        got = select_entropy_threshold(pb, labels).threshold
        agree += got == threshold_bruteforce(pb.normalized_entropy, correct, THRESHOLD_GRID)[0]
    elapsed = time.perf_counter() - start
    ok = criterion(2, agree == 100 and elapsed < 5.0, f"argmin agreement {agree}/100, {elapsed:.2f}s")
    assert ok


def test_3_calibration_contract(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    violations = 0
    for _ in range(50):
        n, k = int(rng.integers(1, 201)), int(rng.integers(2, 6))
        logits = rng.normal(size=(n, k)) * rng.uniform(0.2, 6)
        labels = rng.integers(0, k, n)
        r = fit_temperature(logits, labels)
        same_argmax = np.array_equal(scale_logits(logits, r.tau).argmax(axis=1), logits.argmax(axis=1))
        violations += (not same_argmax) or r.ece_after > ece(logits, labels)
    true_logits = rng.normal(size=(5000, 4)) * 2
    p = mdl.softmax(true_logits)
    labels = (p.cumsum(axis=1) < rng.random(5000)[:, None]).sum(axis=1)
    tau = fit_temperature(true_logits * 3, labels).tau
    elapsed = time.perf_counter() - start
    ok = criterion(3, violations == 0 and tau > 1 and elapsed < 10.0,
                   f"{violations} contract violations in 50 instances, overconfident tau {tau:.2f}, {elapsed:.2f}s")
    assert ok


def test_4_sampler_exactness(criterion):
    start = time.perf_counter()
    bad = 0
    for fraction, lab in ((0.2, 20), (0.4, 40)):
        sampler = split_batches(100, 4000, SplitBatchConfig(100, fraction, seed=4))
        for _ in range(10_000):
            b = sampler.next_batch()
            bad += (len(b.labeled), len(b.pseudo)) != (lab, 100 - lab)
    rng = np.random.default_rng(4)
    pool = PredictionBatch.from_logits(rng.normal(size=(40, 4)) * 2)
    w = compute_sample_weights(pool)
    draws = split_batches(10, 40, SplitBatchConfig(seed=5), w).draw_pseudo(100_000)
    freq = np.bincount(draws, minlength=40) / len(draws)
    z = np.abs(freq - w.final_weight) / np.sqrt(w.final_weight * (1 - w.final_weight) / len(draws))
    elapsed = time.perf_counter() - start
    ok = criterion(4, bad == 0 and z.max() <= 3 and elapsed < 30.0,
                   f"{bad} malformed of 20000 batches, max |z| {z.max():.2f} over 1e5 draws, {elapsed:.2f}s")
    assert ok


def test_5_beta_machinery(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        a, b = rng.uniform(0.5, 5, 2)
        x = float(rng.random())
        worst = max(worst, abs(beta_cdf(x, a, b) - beta_cdf_simpson(x, a, b)))
    rel = 0.0
    for a, b in ((2, 5), (5, 2), (1, 1)):
        fa, fb = fit_beta_moments(rng.beta(a, b, 100_000))
        rel = max(rel, abs(fa - a) / a, abs(fb - b) / b)
    elapsed = time.perf_counter() - start
    ok = criterion(5, worst < 1e-8 and rel < 0.1 and elapsed < 10.0,
                   f"max |cdf - simpson| {worst:.1e}, worst moment error {100 * rel:.1f}%, {elapsed:.2f}s")
    assert ok


def test_6_gradient_checks(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for tier in (Tier.SMALL, Tier.LARGE):
        for mode in LossMode:
            model = Classifier.create(tier, 6, 4, seed=int(rng.integers(1000)))
            batch = Batch(rng.normal(size=(5, 6)), rng.integers(0, 4, 5), rng.normal(size=(7, 6)),
                          mdl.softmax(rng.normal(size=(7, 4)) * 2))
            x, t, wts = mdl.batch_objective(batch, 4, mode, 0.5)
            _, grads = mdl.loss_and_grads(model, x, t, wts)
            index = [(p, int(rng.integers(model.params[p].size))) for p in range(len(model.params)) for _ in range(4)]
            analytic = np.array([grads[p].reshape(-1)[i] for p, i in index])
            numeric = central_difference(lambda: mdl.loss_and_grads(model, x, t, wts)[0], model.params, index)
            scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
            worst = max(worst, float((np.abs(analytic - numeric) / scale).max()))
    elapsed = time.perf_counter() - start
    ok = criterion(6, worst < 1e-4 and elapsed < 5.0,
                   f"max relative gradient error {worst:.1e} (hard/soft/mixed x small/large), {elapsed:.2f}s")
    assert ok


def test_7_est_trend(criterion):
    start = time.perf_counter()
    held, lines = 0, []
    for g in BENCHMARK_SEEDS:
        split = standard_split(g)
        est = run_experiment(preset("EST"), split, RUN_SEEDS)
        ns = run_experiment(preset("NS"), split, RUN_SEEDS)
        teacher, est_final, ns_final = est.mean_teacher_test(), est.final_mean_test(), ns.final_mean_test()
        ok = est_final >= teacher + 0.02 and est_final >= ns_final
        held += ok
        lines.append(f"g{g}: teacher {teacher:.3f} EST {est_final:.3f} NS {ns_final:.3f}")
    elapsed = time.perf_counter() - start
    ok = criterion(7, held >= 2 and elapsed < 300, f"held on {held}/3 ({'; '.join(lines)}), {elapsed:.0f}s")
    assert ok


def test_8_unlabeled_size_trend(criterion):
    start = time.perf_counter()
    sizes = (500, 1000, 2000, 4000)
    finals = [run_experiment(preset("EST"), standard_split(0, n_unlabeled=n), RUN_SEEDS).final_mean_test()
              for n in sizes]
    monotone = all(b >= max(finals[:i + 1]) - 0.01 for i, b in enumerate(finals[1:]))
    elapsed = time.perf_counter() - start
    trend = ", ".join(f"{n}: {a:.3f}" for n, a in zip(sizes, finals))
    ok = criterion(8, monotone and elapsed < 600, f"final test by pool size {trend}, {elapsed:.0f}s")
    assert ok


def test_9_open_set_filtering(criterion):
    start = time.perf_counter()
    split = standard_split(0, num_nontarget_classes=2, nontarget_separation=8.0)
    nontarget = split.unlabeled.origin >= split.num_target_classes
    rejected, retained, better = [], [], 0
    for s in RUN_SEEDS:
        plain = run_self_training(split, preset("EST"), s)
        filtered = run_self_training(split, preset("EST", open_set_filter=True), s)
        keep = open_set_keep(filtered.teacher, split, split.unlabeled.features, 0.9)
        rejected.append(float((~keep[nontarget]).mean()))
        retained.append(float(keep[~nontarget].mean()))
        better += filtered.records[-1].test_acc >= plain.records[-1].test_acc
    elapsed = time.perf_counter() - start
    ok = min(rejected) >= 0.9 and min(retained) >= 0.9 and better >= 2 and elapsed < 600
    detail = (f"non-targets rejected min {min(rejected):.3f}, targets retained min {min(retained):.3f}, "
              f"filtered >= unfiltered on {better}/3, {elapsed:.0f}s")
    criterion(9, ok, detail)
    assert ok


def test_10_determinism_and_golden(criterion):
    start = time.perf_counter()
    first, second = golden_report_text(), golden_report_text()
    ns_split = standard_split(0)
    ns_a = report.render(run_experiment(preset("NS"), ns_split, (0,)))
    ns_b = report.render(run_experiment(preset("NS"), ns_split, (0,)))
    golden = GOLDEN.read_text() if GOLDEN.exists() else None
    ok = first == second and ns_a == ns_b and golden == first
    elapsed = time.perf_counter() - start
    detail = (f"repeat runs identical: EST {first == second}, NS {ns_a == ns_b}; "
              f"golden match {golden == first}, {elapsed:.0f}s")
    criterion(10, ok, detail)
    assert ok
