import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_difference
from selftrain import model as mdl
from selftrain.model import Batch, Classifier, LossMode, Tier, TrainConfig

finite = st.floats(-20, 20, allow_nan=False)


def logit_batches(n_max=8, k_max=5):
    return st.tuples(st.integers(1, n_max), st.integers(2, k_max)).flatmap(
        lambda nk: arrays(np.float64, nk, elements=finite))


class TestLosses:

    def test_uniform_hard_loss(self):
        assert mdl.hard_loss(np.zeros((3, 4)), [0, 1, 3]) == pytest.approx(math.log(4), abs=1e-12)

    def test_peaked_hard_loss(self):
        assert mdl.hard_loss(np.array([[50.0, 0.0, 0.0]]), [0]) < 1e-20

    def test_hard_loss_two_logits(self):
        # -ln(e^2 / (e^2 + 1)) = ln(1 + e^-2)
        assert mdl.hard_loss(np.array([[2.0, 0.0]]), [0]) == pytest.approx(0.12692801104297263, abs=1e-14)

    def test_uniform_soft_loss(self):
        assert mdl.soft_loss(np.zeros((2, 2)), np.full((2, 2), 0.5)) == pytest.approx(math.log(2), abs=1e-12)

    def test_soft_loss_self_target_is_entropy(self):
        logits = np.array([[1.0, -0.5, 2.0]])
        p = mdl.softmax(logits)
        assert mdl.soft_loss(logits, p) == pytest.approx(-(p * np.log(p)).sum(), abs=1e-12)

    def test_soft_loss_rejects_unnormalised(self):
        with pytest.raises(ValueError):
            mdl.soft_loss(np.zeros((1, 2)), np.array([[0.5, 0.6]]))

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            mdl.hard_loss(np.zeros((0, 3)), [])

    def test_mixed_loss_arithmetic(self, monkeypatch):
        monkeypatch.setattr(mdl, "hard_loss", lambda *a: 2.0)
        monkeypatch.setattr(mdl, "soft_loss", lambda *a: 4.0)
        assert mdl.mixed_loss(None, [0], None, [[1.0]], 0.5) == 3.0
        assert mdl.mixed_loss(None, [0], None, [[1.0]], 1.0) == 2.0
        assert mdl.mixed_loss(None, [0], None, [[1.0]], 0.0) == 4.0

    def test_mixed_loss_needs_both_halves(self):
        with pytest.raises(ValueError):
            mdl.mixed_loss(np.zeros((0, 2)), [], np.zeros((1, 2)), [[0.5, 0.5]], 0.5)

    @settings(max_examples=50, deadline=None)
    @given(logits=logit_batches(), seed=st.integers(0, 1000))
    def test_soft_on_one_hot_equals_hard(self, logits, seed):
        labels = np.random.default_rng(seed).integers(0, logits.shape[1], len(logits))
        assert mdl.soft_loss(logits, mdl.one_hot(labels, logits.shape[1])) == pytest.approx(
            mdl.hard_loss(logits, labels), abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(logits=logit_batches())
    def test_softmax_rows(self, logits):
        p = mdl.softmax(logits)
        assert np.all(p > 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(a=logit_batches(), seed=st.integers(0, 1000))
    def test_mixed_loss_affine_in_lambda(self, a, seed):
        rng = np.random.default_rng(seed)
        k = a.shape[1]
        b = rng.normal(size=(3, k))
        y = rng.integers(0, k, len(a))
        t = mdl.softmax(rng.normal(size=(3, k)))
        lab, ps = mdl.hard_loss(a, y), mdl.soft_loss(b, t)
        for lam in (0.0, 0.25, 0.5, 1.0):
            assert mdl.mixed_loss(a, y, b, t, lam) == pytest.approx(lam * lab + (1 - lam) * ps, abs=1e-12)


class TestPrediction:

    def test_zero_weight_logistic(self):
        m = Classifier.create(Tier.LOGISTIC, 3, 4, seed=0)
        m.weights[0][:] = 0
        m.biases[0][:] = 0
        assert np.all(mdl.predict_logits(m, np.random.default_rng(0).normal(size=(5, 3))) == 0)

    @pytest.mark.parametrize("tier", list(Tier))
    def test_shape_and_purity(self, tier):
        m = Classifier.create(tier, 6, 3, seed=1)
        x = np.random.default_rng(1).normal(size=(7, 6))
        out = mdl.predict_logits(m, np.vstack([x, x[:1]]))
        assert out.shape == (8, 3)
        assert np.array_equal(out[0], out[7])
        assert np.all(np.isfinite(out))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mdl.predict_logits(Classifier.create(Tier.SMALL, 4, 2, 0), np.zeros((2, 5)))

    def test_penultimate_features(self):
        m = Classifier.create(Tier.SMALL, 4, 3, seed=2)
        x = np.random.default_rng(2).normal(size=(5, 4))
        h = mdl.penultimate_features(m, np.vstack([x, x[:1]]))
        assert h.shape == (6, 32)
        assert np.array_equal(h[0], h[5])
        assert np.all(np.isfinite(h))
        assert mdl.penultimate_features(Classifier.create(Tier.LARGE, 4, 3, 2), x).shape == (5, 128)

    def test_penultimate_needs_hidden_layer(self):
        with pytest.raises(ValueError):
            mdl.penultimate_features(Classifier.create(Tier.LOGISTIC, 4, 3, 0), np.zeros((1, 4)))


def check_gradient(model, batch, mode, lam, seed):
    x, t, w = mdl.batch_objective(batch, model.num_classes, mode, lam)
    _, grads = mdl.loss_and_grads(model, x, t, w)
    rng = np.random.default_rng(seed)
    index = []
    for _ in range(5):
        p_i = int(rng.integers(len(model.params)))
        index.append((p_i, int(rng.integers(model.params[p_i].size))))
    analytic = np.array([grads[p_i].reshape(-1)[flat] for p_i, flat in index])
    numeric = central_difference(lambda: mdl.loss_and_grads(model, x, t, w)[0], model.params, index)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return rel.max()


def random_batch(rng, d, k, n_l=6, n_p=9):
    return Batch(rng.normal(size=(n_l, d)), rng.integers(0, k, n_l), rng.normal(size=(n_p, d)),
                 mdl.softmax(rng.normal(size=(n_p, k)) * 2))


@pytest.mark.parametrize("tier", list(Tier))
@pytest.mark.parametrize("mode", list(LossMode))
def test_gradients_match_finite_differences(tier, mode):
    rng = np.random.default_rng(3)
    model = Classifier.create(tier, 5, 4, seed=3)
    assert check_gradient(model, random_batch(rng, 5, 4), mode, 0.5, seed=4) < 1e-4


def blobs(rng, n=100, sep=6.0):
    y = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(n, 2)) + np.where(y[:, None] == 0, -sep / 2, sep / 2)
    return x, y


def full_batch(x, y):
    empty = np.zeros((0, x.shape[1]))
    return lambda epoch: [Batch(x, y, empty, np.zeros((0, 2)))]


class TestTrain:

    def test_separable_blobs(self):
        rng = np.random.default_rng(0)
        x, y = blobs(rng)
        m = Classifier.create(Tier.LOGISTIC, 2, 2, seed=0)
        mdl.train(m, full_batch(x, y), TrainConfig(epochs=50, loss_mode=LossMode.HARD, learning_rate=0.1))
        assert mdl.accuracy(m, x, y) >= 0.99

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        x, y = blobs(rng)
        cfg = TrainConfig(epochs=20, loss_mode=LossMode.HARD, input_noise=0.3, seed=5)
        a = mdl.train(Classifier.create(Tier.SMALL, 2, 2, 9), full_batch(x, y), cfg)[0]
        b = mdl.train(Classifier.create(Tier.SMALL, 2, 2, 9), full_batch(x, y), cfg)[0]
        assert a.same_weights(b)

    def test_loss_non_increasing_on_convex_problem(self):
        rng = np.random.default_rng(2)
        x, y = blobs(rng, sep=1.0)
        cfg = TrainConfig(epochs=60, loss_mode=LossMode.HARD, learning_rate=0.05, momentum=0.0,
                          weight_decay=0.0, decay_at=())
        _, trace = mdl.train(Classifier.create(Tier.LOGISTIC, 2, 2, 0), full_batch(x, y), cfg)
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self):
        rng = np.random.default_rng(3)
        x, y = blobs(rng)
        cfg = TrainConfig(epochs=50, loss_mode=LossMode.HARD, learning_rate=1e6)
        with pytest.raises(mdl.TrainingDiverged, match="learning rate"):
            mdl.train(Classifier.create(Tier.SMALL, 2, 2, 0), full_batch(x * 1e3, y), cfg)

    def test_weights_finite(self):
        rng = np.random.default_rng(4)
        x, y = blobs(rng)
        m, _ = mdl.train(Classifier.create(Tier.LARGE, 2, 2, 0), full_batch(x, y),
                         TrainConfig(epochs=10, loss_mode=LossMode.HARD))
        assert m.is_finite()

    def test_step_decay_schedule(self):
        cfg = TrainConfig(epochs=100, learning_rate=1.0)
        assert [cfg.rate_at(e) for e in (0, 49, 50, 74, 75, 99)] == pytest.approx([1, 1, 0.1, 0.1, 0.01, 0.01])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(lambda_b=1.5)


@pytest.mark.parametrize("tier", list(Tier))
def test_checkpoint_round_trip(tmp_path, tier):
    m = Classifier.create(tier, 3, 4, seed=11)
    mdl.save_checkpoint(m, tmp_path / "m.txt")
    back = mdl.load_checkpoint(tmp_path / "m.txt")
    assert back.same_weights(m)
    assert (back.tier, back.feature_dim, back.num_classes, back.init_seed) == (tier, 3, 4, 11)


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        mdl.parse_checkpoint("selftrain-checkpoint 1\ntier SMALL\n")
