import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepbose.clustering import DmaeConfig, build_codebook
from deepbose.engine import (
    TrainConfig,
    TrainHistory,
    backward,
    class_weights,
    dense_init,
    fit_embedded,
    train_supervised,
    weighted_bce,
)
from deepbose.baseline import init_idf_weights
from deepbose.errors import ConfigError, DataError, DivergenceError, ModelMismatchError
from deepbose.model import DenseLayer, DenseStack, ModelParams, forward
from deepbose.optim import AdamState, adam_step
from deepbose.text import Corpus, embed_corpus, generate_synthetic_corpus, stratified_split

from helpers import conditioned_micro_models, fd_param_grads, micro_model, rel_err


class TestWeightedBce:
    def test_perfect_prediction(self):
        assert weighted_bce(1.0, 1, 3.0, 0.2) == pytest.approx(0.0, abs=1e-11)

    def test_half(self):
        assert weighted_bce(0.5, 1) == pytest.approx(math.log(2), abs=1e-15)

    def test_weights_scale_each_class(self):
        assert weighted_bce(0.3, 1, 2.0, 5.0) == pytest.approx(-2.0 * math.log(0.3), rel=1e-15)
        assert weighted_bce(0.3, 0, 2.0, 5.0) == pytest.approx(-5.0 * math.log(0.7), rel=1e-15)

    def test_clamped(self):
        assert weighted_bce(0.0, 1) == pytest.approx(-math.log(1e-12), rel=1e-12)
        assert np.isfinite(weighted_bce(1.0, 0))

    @settings(max_examples=150, deadline=None)
    @given(st.floats(0, 1), st.sampled_from([0, 1]), st.floats(0, 10), st.floats(0, 10))
    def test_non_negative(self, p, y, wp, wn):
        assert weighted_bce(p, y, wp, wn) >= 0.0


class TestClassWeights:
    def test_balanced(self):
        assert class_weights([0, 1, 0, 1]) == (1.0, 1.0)

    def test_imbalanced_counts(self):
        w_pos, w_neg = class_weights([1] * 83 + [0] * 403)
        assert w_pos == pytest.approx(2.927710843373494, rel=1e-15)
        assert w_neg == pytest.approx(0.6029776674937966, rel=1e-15)
        # Weighted class masses balance.
        assert 83 * w_pos == pytest.approx(403 * w_neg, rel=1e-14)

    def test_one_of_four(self):
        w_pos, w_neg = class_weights([1, 0, 0, 0])
        assert w_pos == 2.0 and w_neg == pytest.approx(2 / 3, rel=1e-15)

    def test_single_class(self):
        with pytest.raises(DataError):
            class_weights([1, 1])

    def test_accepts_corpus(self):
        corpus, _, _ = generate_synthetic_corpus(6, 3, 2, 2, 4, 0.5, 0)
        assert class_weights(corpus) == (1.0, 1.0)


class TestBackward:
    def test_constant_model_has_zero_input_gradient(self):
        params, X = micro_model(2)
        last = params.dense.layers[-1]
        layers = params.dense.layers[:-1] + (
            DenseLayer(np.zeros_like(last.weight), np.zeros(1), "sigmoid"),)
        const = ModelParams(params.codebook, params.idf_weights, DenseStack(layers))
        cache = forward(X, const)
        assert cache.y == 0.5
        grads = backward(cache, const, 1)
        assert np.all(grads.d_input == 0.0)
        assert np.all(grads.d_codebook == 0.0)

    def test_shapes_mirror_params(self):
        params, X = micro_model(3)
        grads = backward(forward(X, params), params, 0)
        assert grads.d_input.shape == X.shape
        for key, arr in params.arrays().items():
            assert grads.as_arrays()[key].shape == arr.shape
            assert np.all(np.isfinite(grads.as_arrays()[key]))

    def test_label_swap_ratio_is_class_weight_ratio(self):
        params, X = micro_model(4)
        last = params.dense.layers[-1]
        # Negating the output layer maps y to 1 - y.
        mirrored = ModelParams(params.codebook, params.idf_weights, DenseStack(
            params.dense.layers[:-1] + (DenseLayer(-last.weight, -last.bias, "sigmoid"),)))
        w_pos, w_neg = 2.5, 0.625
        pos = backward(forward(X, params), params, 1, w_pos, w_neg)
        neg = backward(forward(X, mirrored), mirrored, 0, w_pos, w_neg)
        for a, b in ((pos.d_input, neg.d_input), (pos.d_codebook, neg.d_codebook),
                     (pos.d_idf, neg.d_idf), (pos.d_dense[0][0], neg.d_dense[0][0])):
            np.testing.assert_allclose(a, (w_pos / w_neg) * b, rtol=1e-10, atol=1e-14)

    def test_average_pooling_gradients(self):
        for _, params, X in conditioned_micro_models(3, start=40):
            avg = ModelParams(params.codebook, params.idf_weights, params.dense, "average")
            grads = backward(forward(X, avg), avg, 1).as_arrays()
            numeric = fd_param_grads(
                lambda p: weighted_bce(forward(X, p).y, 1), avg)
            for key in numeric:
                assert np.max(rel_err(grads[key], numeric[key])) < 1e-4, key
            assert np.all(grads["idf"] == 0.0)

    def test_train_mode_respects_cached_mask(self):
        params, X = micro_model(5, dropout=0.3)
        seed = 17

        def loss(p):
            return weighted_bce(forward(X, p, mode="train", seed=seed).y, 1)

        cache = forward(X, params, mode="train", seed=seed)
        assert any(m is not None for m in cache.dense["masks"])
        grads = backward(cache, params, 1).as_arrays()
        numeric = fd_param_grads(loss, params)
        for key in ("W0", "W1", "theta"):
            assert np.max(rel_err(grads[key], numeric[key])) < 1e-4, key

    def test_mismatched_cache(self):
        params, X = micro_model(6)
        other, _ = micro_model(6, block_sizes=(2, 2))
        cache = forward(X, params)
        with pytest.raises(ModelMismatchError):
            backward(cache, other, 1)

    def test_bad_target(self):
        params, X = micro_model(6)
        cache = forward(X, params)
        with pytest.raises(ValueError):
            backward(cache, params, 3)
        with pytest.raises(ValueError):
            backward(cache, params, 1, target="logit")


class TestAdam:
    def test_zero_gradient(self):
        params = {"w": np.array([1.0, -2.0])}
        out, state = adam_step(params, {"w": np.zeros(2)}, AdamState(), 0.1)
        np.testing.assert_array_equal(out["w"], params["w"])
        assert state.step == 1

    def test_first_step_moves_by_lr(self):
        out, _ = adam_step({"w": np.array(3.0)}, {"w": np.array(0.7)}, AdamState(), 0.01)
        assert float(out["w"]) == pytest.approx(3.0 - 0.01, abs=1e-9)

    def test_quadratic(self):
        params, state = {"w": np.array(1.0)}, AdamState()
        for _ in range(100):
            params, state = adam_step(params, {"w": 2 * params["w"]}, state, 0.1)
        assert abs(float(params["w"])) < 0.1

    def test_only_given_keys_move(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        out, _ = adam_step(params, {"a": np.ones(2)}, AdamState(), 0.1)
        assert np.all(out["b"] == 1.0) and np.all(out["a"] < 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            adam_step({"a": np.ones(2)}, {"a": np.ones(3)}, AdamState(), 0.1)
        with pytest.raises(ValueError, match="unknown"):
            adam_step({"a": np.ones(2)}, {"b": np.ones(2)}, AdamState(), 0.1)


class TestDenseInit:
    def test_deterministic(self):
        a, b = dense_init([6, 4, 1], seed=3), dense_init([6, 4, 1], seed=3)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weight, lb.weight)

    def test_single_layer(self):
        stack = dense_init([4, 1])
        assert len(stack.layers) == 1
        assert stack.layers[0].weight.shape == (4, 1)
        assert stack.layers[0].activation == "sigmoid"

    def test_glorot_bounds_and_mean(self):
        stack = dense_init([100, 100, 1], seed=0)
        W = stack.layers[0].weight.ravel()
        limit = math.sqrt(6 / 200)
        assert np.all(np.abs(W) <= limit)
        assert np.all(stack.layers[0].bias == 0)
        sem = W.std(ddof=1) / math.sqrt(W.size)
        assert abs(W.mean()) < 3 * sem

    @pytest.mark.parametrize("widths", [[4], [4, 2], [4, 0, 1]])
    def test_bad_widths(self, widths):
        with pytest.raises(ConfigError):
            dense_init(widths)


class TestTrainConfig:
    def test_mode_defaults(self):
        assert TrainConfig(mode="stl").lr == 1e-6
        assert TrainConfig(mode="utl").lr == 1e-5
        assert TrainConfig(mode="utl").trainable == ("dense",)
        assert set(TrainConfig().trainable) == {"codebook", "biases", "idf", "dense"}

    @pytest.mark.parametrize("kw", [{"lr": 0.0}, {"epochs": -1}, {"mode": "x"},
                                    {"batch_size": 0}, {"trainable": ("weights",)}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_thread_env(self, monkeypatch):
        monkeypatch.setenv("DEEPBOSE_NUM_THREADS", "3")
        assert TrainConfig().threads() == 3
        assert TrainConfig(n_jobs=2).threads() == 2


@pytest.fixture(scope="module")
def fixture_run():
    corpus, table, lex = generate_synthetic_corpus(60, 30, 4, 8, 8, 0.9, seed=11)
    cb = build_codebook(lex, table, alpha=20.0, dmae_config=DmaeConfig(epochs=0))
    params = ModelParams(cb, init_idf_weights(corpus, table, cb), dense_init([cb.K, 8, 1], 0))
    return corpus, table, params


class TestTraining:
    def test_epochs_zero(self, fixture_run):
        corpus, table, params = fixture_run
        out, hist = train_supervised(corpus, table, params, TrainConfig(epochs=0))
        assert out is params and len(hist) == 0

    def test_loss_decreases(self, fixture_run):
        corpus, table, params = fixture_run
        cfg = TrainConfig(lr=1e-2, epochs=15, patience=100)
        _, hist = train_supervised(corpus, table, params, cfg)
        assert len(hist) == 15 == len(hist.val_loss) == len(hist.val_f1)
        assert hist.train_loss[-1] < hist.train_loss[0]

    def test_idf_only_training_changes_predictions(self, fixture_run):
        corpus, table, params = fixture_run
        docs = embed_corpus(corpus, table)
        cfg = TrainConfig(lr=1e-2, epochs=2, trainable=("idf",), patience=100)
        before = [forward(d, params).y for d in docs]
        out, _ = fit_embedded(docs, corpus.labels, params, cfg)
        after = [forward(d, out).y for d in docs]
        assert not np.allclose(before, after)
        np.testing.assert_array_equal(out.codebook.theta, params.codebook.theta)
        np.testing.assert_array_equal(out.dense.layers[0].weight, params.dense.layers[0].weight)

    def test_deterministic_across_threads(self, fixture_run):
        corpus, table, params = fixture_run
        train, val = stratified_split(corpus, 0.2, 0)
        runs = []
        for n_jobs in (1, 1, 4):
            cfg = TrainConfig(lr=1e-2, epochs=4, seed=5, n_jobs=n_jobs, patience=100)
            out, hist = train_supervised(train, table, params, cfg, val)
            runs.append((out.arrays(), hist))
        for arrays, hist in runs[1:]:
            assert hist == runs[0][1]
            for key in arrays:
                np.testing.assert_array_equal(arrays[key], runs[0][0][key])

    def test_early_stopping(self, fixture_run):
        corpus, table, params = fixture_run
        cfg = TrainConfig(lr=1e-9, epochs=50, patience=2)
        _, hist = train_supervised(corpus, table, params, cfg)
        assert len(hist) < 50
        assert hist.best_epoch is not None and hist.best_epoch <= len(hist)

    def test_history_csv(self, tmp_path):
        hist = TrainHistory([0.5, 0.25], [0.6, 0.3], [0.0, 1.0], 2)
        hist.to_csv(tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines() == [
            "epoch,train_loss,val_loss,val_f1", "1,0.5,0.6,0.0", "2,0.25,0.3,1.0"]

    def test_errors(self, fixture_run):
        corpus, table, params = fixture_run
        with pytest.raises(DataError):
            train_supervised(Corpus(()), table, params, TrainConfig())
        one_class = Corpus(tuple(d for d in corpus if d.label == 1))
        with pytest.raises(DataError):
            train_supervised(one_class, table, params, TrainConfig())

    def test_divergence(self, fixture_run):
        corpus, table, params = fixture_run
        broken = params.with_arrays({"idf": np.full(params.codebook.K, np.nan)})
        with pytest.raises(DivergenceError):
            train_supervised(corpus, table, broken, TrainConfig(epochs=1))
