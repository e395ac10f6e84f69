import math

import numpy as np
import pytest

from statutepred import model
from statutepred.model import ModelConfig, attention_weights, forward, init_params, loss

from tests.conftest import TINY, random_instance
from tests.oracles import forward_oracle, loss_oracle


class TestInit:
    def test_default_hidden_layer_shape(self):
        config = ModelConfig(num_statutes=100)
        params = init_params(config, seed=1)
        assert params.W_h.shape == (1536, 3 * 768)
        assert params.W_q.shape == (100, 3, 100, 768)
        assert params.W_o.shape == (100, 2, 1536)

    def test_same_seed_bit_identical(self):
        a = init_params(TINY, seed=42)
        b = init_params(TINY, seed=42)
        for name in model.ModelParams.TENSOR_NAMES:
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_biases_start_at_zero(self):
        params = init_params(TINY, seed=3)
        for name in ("b_q", "b_k", "b_h", "b_o"):
            assert not getattr(params, name).any()

    def test_weights_within_glorot_limit(self):
        params = init_params(TINY, seed=3)
        limit = math.sqrt(6.0 / (TINY.embed_dim + TINY.attn_dim))
        assert np.abs(params.W_q).max() <= limit
        assert np.abs(params.W_k).max() <= limit


class TestConfigValidation:
    def test_rejects_bad_dropout(self):
        with pytest.raises(ValueError):
            ModelConfig(num_statutes=2, dropout=1.0)

    def test_rejects_zero_dimension(self):
        with pytest.raises(ValueError):
            ModelConfig(num_statutes=0)

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            ModelConfig(num_statutes=2, positive_class_weight=0.0)


class TestAttention:
    def test_single_sentence_gets_full_weight(self):
        rng = np.random.default_rng(0)
        params, _, Y, _ = random_instance(rng, TINY, 1)
        X = rng.normal(size=(1, TINY.embed_dim))
        detail = attention_weights(params, TINY, 0, 0, X, Y[0])
        assert detail.weights.shape == (1,)
        assert detail.weights[0] == pytest.approx(1.0, abs=0)

    def test_identical_sentences_split_evenly(self):
        rng = np.random.default_rng(1)
        params, _, Y, _ = random_instance(rng, TINY, 2)
        row = rng.normal(size=TINY.embed_dim)
        X = np.stack([row, row])
        detail = attention_weights(params, TINY, 1, 0, X, Y[1])
        assert detail.weights[0] == detail.weights[1] == pytest.approx(0.5, abs=0)

    def test_matches_reference_reimplementation(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            params, X, Y, _ = random_instance(rng, TINY, 3)
            alpha_ref, _ = forward_oracle(params, TINY, X.tolist(), Y.tolist())
            for i in range(TINY.num_statutes):
                for h in range(TINY.heads):
                    detail = attention_weights(params, TINY, i, h, X, Y[i])
                    np.testing.assert_allclose(detail.weights, alpha_ref[i][h], atol=1e-10)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(2)
        params, X, Y, _ = random_instance(rng, TINY, 2)
        with pytest.raises(ValueError):
            attention_weights(params, TINY, 0, 0, X[:, :2], Y[0])


class TestForward:
    def test_matches_oracle_on_20_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n_sent = int(rng.integers(1, 5))
            params, X, Y, _ = random_instance(rng, TINY, n_sent)
            trace = forward(params, TINY, X, Y)
            alpha_ref, probs_ref = forward_oracle(params, TINY, X.tolist(), Y.tolist())
            np.testing.assert_allclose(trace.alpha, np.array(alpha_ref), atol=1e-10)
            np.testing.assert_allclose(trace.probs, np.array(probs_ref), atol=1e-10)

    def test_one_hot_attention_returns_that_sentence(self):
        # Force attention onto sentence 1 by making its key score dominate.
        config = ModelConfig(num_statutes=1, heads=1, embed_dim=2, attn_dim=2,
                             hidden_dim=2, dropout=0.0, max_sentences=10)
        params = init_params(config, seed=0)
        params.W_q[...] = 0.0
        params.b_q[0, 0] = np.array([50.0, 0.0])
        params.W_k[0, 0] = np.eye(2)
        X = np.array([[-1.0, 0.3], [1.0, -0.7], [-0.5, 0.9]])
        Y = np.zeros((1, 2))
        trace = forward(params, config, X, Y)
        assert np.argmax(trace.alpha[0, 0]) == 1
        assert trace.alpha[0, 0, 1] > 1 - 1e-9
        np.testing.assert_allclose(trace.head_ctx[0, 0], X[1], atol=1e-7)

    def test_zero_parameters_give_uniform_outputs(self):
        rng = np.random.default_rng(3)
        params, X, Y, _ = random_instance(rng, TINY, 3)
        zeros = model.zeros_like_params(params)
        trace = forward(zeros, TINY, X, Y)
        np.testing.assert_allclose(trace.probs, 0.5, atol=0)
        np.testing.assert_allclose(trace.alpha, 1.0 / 3.0, atol=1e-15)

    def test_normalization_invariants(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            params, X, Y, _ = random_instance(rng, TINY, int(rng.integers(1, 6)))
            trace = forward(params, TINY, X, Y)
            np.testing.assert_allclose(trace.alpha.sum(axis=-1), 1.0, atol=1e-6)
            assert (trace.alpha >= 0).all()
            np.testing.assert_allclose(trace.probs.sum(axis=-1), 1.0, atol=1e-6)

    def test_sentence_permutation_only_permutes_attention(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            n_sent = int(rng.integers(2, 6))
            params, X, Y, _ = random_instance(rng, TINY, n_sent)
            perm = rng.permutation(n_sent)
            base = forward(params, TINY, X, Y)
            shuffled = forward(params, TINY, X[perm], Y)
            np.testing.assert_allclose(shuffled.probs, base.probs, atol=1e-9)
            np.testing.assert_allclose(shuffled.alpha, base.alpha[:, :, perm], atol=1e-9)

    def test_context_stays_in_sentence_hull(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            params, X, Y, _ = random_instance(rng, TINY, int(rng.integers(1, 6)))
            trace = forward(params, TINY, X, Y)
            lower = X.min(axis=0) - 1e-9
            upper = X.max(axis=0) + 1e-9
            assert (trace.head_ctx >= lower).all()
            assert (trace.head_ctx <= upper).all()

    def test_output_layer_is_per_statute(self):
        rng = np.random.default_rng(9)
        params, X, Y, _ = random_instance(rng, TINY, 3)
        base = forward(params, TINY, X, Y)
        moved = params.copy()
        moved.W_o[1, model.POSITIVE_CLASS] += 0.5
        moved.b_o[1, model.POSITIVE_CLASS] += 0.25
        after = forward(moved, TINY, X, Y)
        assert not np.allclose(after.probs[1], base.probs[1])
        np.testing.assert_array_equal(after.probs[0], base.probs[0])
        np.testing.assert_array_equal(after.probs[2], base.probs[2])

    def test_attention_is_per_statute_and_head(self):
        rng = np.random.default_rng(10)
        params, X, Y, _ = random_instance(rng, TINY, 4)
        base = forward(params, TINY, X, Y)
        moved = params.copy()
        moved.W_q[2, 1] += 0.3
        after = forward(moved, TINY, X, Y)
        assert not np.allclose(after.alpha[2, 1], base.alpha[2, 1])
        np.testing.assert_array_equal(after.alpha[2, 0], base.alpha[2, 0])
        np.testing.assert_array_equal(after.alpha[:2], base.alpha[:2])
        np.testing.assert_array_equal(after.probs[:2], base.probs[:2])

    def test_rejects_too_many_sentences(self):
        rng = np.random.default_rng(12)
        params, _, Y, _ = random_instance(rng, TINY, 2)
        X = rng.normal(size=(TINY.max_sentences + 1, TINY.embed_dim))
        with pytest.raises(ValueError, match="caps at"):
            forward(params, TINY, X, Y)

    def test_dropout_off_at_inference(self):
        config = ModelConfig(num_statutes=2, heads=2, embed_dim=4, attn_dim=2,
                             hidden_dim=8, dropout=0.5, max_sentences=10)
        rng = np.random.default_rng(13)
        params, X, Y, _ = random_instance(rng, config, 3)
        a = forward(params, config, X, Y, training=False)
        b = forward(params, config, X, Y, training=False)
        np.testing.assert_array_equal(a.probs, b.probs)
        assert a.dropout_mask is None

    def test_dropout_seed_reproducible(self):
        config = ModelConfig(num_statutes=2, heads=2, embed_dim=4, attn_dim=2,
                             hidden_dim=8, dropout=0.5, max_sentences=10)
        rng = np.random.default_rng(14)
        params, X, Y, _ = random_instance(rng, config, 3)
        a = forward(params, config, X, Y, training=True, dropout_seed=99)
        b = forward(params, config, X, Y, training=True, dropout_seed=99)
        c = forward(params, config, X, Y, training=True, dropout_seed=100)
        np.testing.assert_array_equal(a.probs, b.probs)
        np.testing.assert_array_equal(a.dropout_mask, b.dropout_mask)
        assert not np.array_equal(a.dropout_mask, c.dropout_mask)

    def test_dropout_scales_kept_units(self):
        config = ModelConfig(num_statutes=1, heads=1, embed_dim=2, attn_dim=2,
                             hidden_dim=6, dropout=0.5, max_sentences=4)
        rng = np.random.default_rng(15)
        params, X, Y, _ = random_instance(rng, config, 2)
        plain = forward(params, config, X, Y, training=False)
        dropped = forward(params, config, X, Y, training=True, dropout_seed=0)
        relu = np.maximum(plain.pre_hidden, 0.0)
        expected = relu * dropped.dropout_mask / 0.5
        np.testing.assert_allclose(dropped.hidden, expected, atol=1e-12)


class TestLoss:
    def test_uniform_output_closed_form(self):
        config = ModelConfig(num_statutes=2, heads=2, embed_dim=4, attn_dim=2,
                             hidden_dim=3, dropout=0.0, max_sentences=10)
        rng = np.random.default_rng(16)
        params, X, Y, _ = random_instance(rng, config, 3)
        zeros = model.zeros_like_params(params)
        trace = forward(zeros, config, X, Y)
        total, per = loss(trace, {0}, config)
        assert total == pytest.approx(4 * math.log(2), abs=1e-9)
        assert per[0] == pytest.approx(3 * math.log(2), abs=1e-9)
        assert per[1] == pytest.approx(math.log(2), abs=1e-9)

    def test_perfect_confident_predictions_near_zero(self):
        rng = np.random.default_rng(17)
        params, X, Y, _ = random_instance(rng, TINY, 2)
        trace = forward(params, TINY, X, Y)
        gold = {0}
        trace.probs = np.zeros_like(trace.probs)
        trace.probs[0, model.POSITIVE_CLASS] = 1.0
        for i in range(1, TINY.num_statutes):
            trace.probs[i, model.NEGATIVE_CLASS] = 1.0
        total, _ = loss(trace, gold, TINY)
        assert total == pytest.approx(0.0, abs=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(18)
        for _ in range(20):
            params, X, Y, gold = random_instance(rng, TINY, int(rng.integers(1, 5)))
            trace = forward(params, TINY, X, Y)
            total, _ = loss(trace, gold, TINY)
            expected = loss_oracle(trace.probs.tolist(), gold, TINY)
            assert total == pytest.approx(expected, abs=1e-10)

    def test_custom_class_weights_scale_terms(self):
        config = ModelConfig(num_statutes=2, heads=2, embed_dim=4, attn_dim=2,
                             hidden_dim=3, dropout=0.0, max_sentences=10,
                             positive_class_weight=2.0, negative_class_weight=0.5)
        rng = np.random.default_rng(20)
        params, X, Y, _ = random_instance(rng, config, 3)
        zeros = model.zeros_like_params(params)
        trace = forward(zeros, config, X, Y)
        total, per = loss(trace, {1}, config)
        assert per[1] == pytest.approx(2.0 * math.log(2), abs=1e-12)
        assert per[0] == pytest.approx(0.5 * math.log(2), abs=1e-12)
        assert total == pytest.approx(2.5 * math.log(2), abs=1e-12)

    def test_rejects_out_of_range_gold(self):
        rng = np.random.default_rng(19)
        params, X, Y, _ = random_instance(rng, TINY, 2)
        trace = forward(params, TINY, X, Y)
        with pytest.raises(ValueError):
            loss(trace, {TINY.num_statutes}, TINY)


class TestPredictTopK:
    def _fixed_prob_params(self, probs):
        """Build params whose positive-class probabilities equal ``probs``."""
        n = len(probs)
        config = ModelConfig(num_statutes=n, heads=1, embed_dim=2, attn_dim=2,
                             hidden_dim=1, dropout=0.0, max_sentences=4)
        params = init_params(config, seed=0)
        for name in model.ModelParams.TENSOR_NAMES:
            getattr(params, name)[...] = 0.0
        params.b_h[...] = 1.0  # hidden = ReLU(1) = 1
        for i, p in enumerate(probs):
            logit = math.log(p / (1 - p)) if 0 < p < 1 else 0.0
            params.b_o[i, model.POSITIVE_CLASS] = logit
        return params, config

    def test_threshold_selection(self):
        params, config = self._fixed_prob_params([0.9, 0.2, 0.6])
        X = np.zeros((2, 2))
        Y = np.zeros((3, 2))
        prediction = model.predict(params, config, X, Y)
        np.testing.assert_allclose(prediction.probs, [0.9, 0.2, 0.6], atol=1e-12)
        assert prediction.predicted == frozenset({0, 2})

    def test_exact_half_tie_is_negative(self):
        params, config = self._fixed_prob_params([0.5, 0.5, 0.5])
        prediction = model.predict(params, config, np.zeros((1, 2)), np.zeros((3, 2)))
        assert prediction.predicted == frozenset()

    def test_top_k_orders_and_breaks_ties_by_id(self):
        params, config = self._fixed_prob_params([0.1, 0.9, 0.9])
        ranked = model.top_k(params, config, np.zeros((1, 2)), np.zeros((3, 2)), 2)
        assert [i for i, _ in ranked] == [1, 2]

    def test_top_k_full_is_permutation(self):
        params, config = self._fixed_prob_params([0.3, 0.8, 0.5])
        ranked = model.top_k(params, config, np.zeros((1, 2)), np.zeros((3, 2)), 3)
        assert sorted(i for i, _ in ranked) == [0, 1, 2]
        assert [i for i, _ in ranked] == [1, 2, 0]

    def test_top_k_bounds_checked(self):
        params, config = self._fixed_prob_params([0.5, 0.5])
        with pytest.raises(ValueError):
            model.top_k(params, config, np.zeros((1, 2)), np.zeros((2, 2)), 3)
