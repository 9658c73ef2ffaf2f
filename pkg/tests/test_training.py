import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cflab.dataset import RatingTable, binarize_explicit, binarize_implicit, build_index_maps, split_train_test
from cflab.factorization import init_factors
from cflab.models import LowRankModel, build_neural_model
from cflab.training import (
    AdamState,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    bce_loss_and_grad,
    best_epoch,
    bpr_loss_and_grads,
    fit_lra,
    sample_negative,
    sample_negatives,
    train_model,
)
from oracles import adam_unrolled

LOG2 = 0.69314718055994530942


def implicit(rows):
    r = RatingTable.from_records(rows)
    return binarize_implicit(r, build_index_maps(r))


def preferred_item_toy():
    # user u loves item u, dislikes the rest
    rows = [(u, i, 5.0 if u == i else 1.0, 0) for u in range(4) for i in range(4)]
    return implicit(rows)


class TestLosses:
    def test_bce_at_zero(self):
        loss, grad = bce_loss_and_grad(0.0, 1.0)
        assert loss == pytest.approx(LOG2, abs=1e-15) and grad == -0.5
        loss, grad = bce_loss_and_grad(0.0, -1.0)
        assert loss == pytest.approx(LOG2, abs=1e-15) and grad == 0.5

    def test_bce_high_precision(self):
        loss, grad = bce_loss_and_grad(2.0, 1.0)
        assert loss == pytest.approx(0.12692801104297249644, abs=1e-15)
        assert grad == pytest.approx(-0.11920292202211755594, abs=1e-15)

    def test_bce_rejects_zero_label(self):
        with pytest.raises(ValueError):
            bce_loss_and_grad(0.0, 0.0)

    def test_bce_stable_at_extremes(self):
        loss, grad = bce_loss_and_grad(np.array([800.0, -800.0]), np.array([-1.0, 1.0]))
        np.testing.assert_allclose(loss, [800.0, 800.0])
        np.testing.assert_allclose(grad, [1.0, -1.0])

    def test_bpr_equal_scores(self):
        loss, dpos, dneg = bpr_loss_and_grads(0.7, 0.7)
        assert loss == pytest.approx(LOG2, abs=1e-15) and dpos == -0.5 and dneg == 0.5

    def test_bpr_limit(self):
        loss, dpos, _ = bpr_loss_and_grads(1000.0, -1000.0)
        assert loss == 0.0 and dpos == 0.0

    def test_bpr_high_precision(self):
        loss, dpos, dneg = bpr_loss_and_grads(1.0, 0.0)
        assert loss == pytest.approx(0.31326168751822283405, abs=1e-15)
        assert dpos == pytest.approx(-0.26894142136999512075, abs=1e-15)
        assert dneg == -dpos

    @given(st.floats(-30, 30), st.floats(-30, 30), st.floats(-50, 50))
    def test_bpr_translation_invariant(self, pos, neg, c):
        a = bpr_loss_and_grads(pos, neg)
        b = bpr_loss_and_grads(pos + c, neg + c)
        for x, y in zip(a, b):
            assert x == pytest.approx(y, rel=1e-9, abs=1e-12)

    @given(st.floats(-20, 20), st.sampled_from([-1.0, 1.0]))
    def test_bce_gradient_matches_difference(self, s, label):
        h = 1e-6
        fd = (bce_loss_and_grad(s + h, label)[0] - bce_loss_and_grad(s - h, label)[0]) / (2 * h)
        assert bce_loss_and_grad(s, label)[1] == pytest.approx(fd, abs=1e-7)


class TestSampler:
    def test_single_candidate(self, rng):
        ds = implicit([(0, i, 5.0 if i != 5 else 1.0, 0) for i in range(8)])
        assert all(sample_negative(ds, 0, rng) == 5 for _ in range(50))

    def test_all_positive_rejected(self, rng):
        ds = implicit([(0, i, 4.0, 0) for i in range(3)])
        with pytest.raises(ValueError):
            sample_negative(ds, 0, rng)

    def test_uniform_over_candidates(self, rng):
        rows = [(0, i, 5.0 if i >= 3 else 1.0, 0) for i in range(10)]
        ds = implicit(rows)
        draws = sample_negatives(ds, np.zeros(100_000, dtype=np.int64), rng)
        freq = np.bincount(draws, minlength=10) / len(draws)
        np.testing.assert_allclose(freq[:3], 1 / 3, atol=0.01)
        assert not freq[3:].any()

    def test_never_a_train_positive(self, implicit_split, rng):
        ds = implicit_split
        users = np.repeat(np.arange(ds.m), 50)
        items = sample_negatives(ds, users, rng)
        assert not ds.train_positive_mask[users, items].any()


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step(self):
        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([1.0])}, AdamState(lr=0.003))
        assert p["w"][0] == pytest.approx(-0.003 / (1 + 1e-8), abs=1e-18)

    def test_deterministic(self):
        def run():
            p = {"w": np.array([0.3, 0.1])}
            s = AdamState(lr=0.01)
            for g in ([1.0, -2.0], [0.5, 0.5]):
                adam_step(p, {"w": np.array(g)}, s)
            return p["w"]

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())

    def test_quadratic_trajectory(self):
        theta = {"w": np.array([1.5])}
        state = AdamState(lr=0.05)
        expected = adam_unrolled(1.5, lambda t: 2 * (t - 0.25), 10, lr=0.05)
        for t in range(10):
            adam_step(theta, {"w": 2 * (theta["w"] - 0.25)}, state)
            assert abs(theta["w"][0] - expected[t]) <= 1e-12


class TestTraining:
    def test_zero_epochs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_one_step_on_three_interactions(self, monkeypatch):
        import cflab.training as training

        ds = implicit([(0, 0, 5.0, 0), (1, 1, 5.0, 0), (2, 2, 5.0, 0), (0, 3, 1.0, 0)])
        model = LowRankModel(init_factors(ds.m, ds.n, 2, seed=0))
        calls = []
        real = training.adam_step
        monkeypatch.setattr(training, "adam_step", lambda p, g, s: calls.append(1) or real(p, g, s))
        train_model(model, ds, TrainConfig(epochs=1, p=2))
        assert len(calls) == 1

    def test_loss_scenario_pairing(self, implicit_split):
        model = LowRankModel(init_factors(implicit_split.m, implicit_split.n, 2))
        with pytest.raises(ValueError):
            train_model(model, implicit_split, TrainConfig(loss="bce", epochs=1))

    def test_separable_toy_reaches_perfect_auc(self):
        ds = preferred_item_toy()
        model, _ = fit_lra(ds, TrainConfig(p=2, epochs=200, batch_size=4, learning_rate=0.05))
        scores = model.score_users(np.arange(4))
        for u in range(4):
            assert all(scores[u, u] > scores[u, j] for j in range(4) if j != u)

    def test_loss_decreases(self, implicit_split):
        cfg = TrainConfig(p=8, epochs=50, learning_rate=0.001, select_best=False)
        _, trace = fit_lra(implicit_split, cfg)
        assert trace[-1].train_loss < trace[0].train_loss

    def test_reproducible(self, implicit_split):
        cfg = TrainConfig(p=4, epochs=3)
        a, ta = fit_lra(implicit_split, cfg)
        b, tb = fit_lra(implicit_split, cfg)
        assert a.factors.fingerprint() == b.factors.fingerprint()
        assert ta == tb

    def test_best_epoch_restored(self, implicit_split):
        from cflab.evaluation import evaluate

        model, trace = fit_lra(implicit_split, TrainConfig(p=4, epochs=6, learning_rate=0.05))
        assert evaluate(model, implicit_split).mrr == trace[best_epoch(trace) - 1].mrr

    def test_frozen_embeddings(self, implicit_split):
        ds = implicit_split
        pre = init_factors(ds.m, ds.n, 4, seed=8)
        model = build_neural_model(ds.m, ds.n, 4, "hadamard", 1, "relu", "pretrained_fixed", pre, seed=0)
        before = {k: v.copy() for k, v in model.network.parameters().items()}
        train_model(model, ds, TrainConfig(epochs=2, p=4, embedding_mode="pretrained_fixed"))
        assert model.factors.fingerprint() == pre.fingerprint()
        assert any(not np.array_equal(before[k], v) for k, v in model.network.parameters().items())

    def test_pretrained_embeddings_move(self, implicit_split):
        ds = implicit_split
        pre = init_factors(ds.m, ds.n, 4, seed=8)
        model = build_neural_model(ds.m, ds.n, 4, "concat", 0, None, "pretrained", pre, seed=0)
        train_model(model, ds, TrainConfig(epochs=1, p=4, embedding_mode="pretrained"))
        assert model.factors.fingerprint() != pre.fingerprint()
        assert pre.fingerprint() == init_factors(ds.m, ds.n, 4, seed=8).fingerprint()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        ds = preferred_item_toy()
        model = LowRankModel(init_factors(ds.m, ds.n, 2, seed=0))
        model.factors.user_factors[0, 0] = np.nan
        with pytest.raises(TrainingDivergedError):
            train_model(model, ds, TrainConfig(p=2, epochs=1))

    def test_explicit_bce(self, synthetic_table):
        ds = split_train_test(binarize_explicit(synthetic_table, build_index_maps(synthetic_table)), 0.8, 0)
        _, trace = fit_lra(ds, TrainConfig(loss="bce", p=4, epochs=5, learning_rate=0.01))
        assert trace[-1].train_loss < trace[0].train_loss
        assert all(math.isfinite(r.auc) for r in trace)
