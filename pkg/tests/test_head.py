"""Prediction head tests with a window-enumeration oracle for max pooling."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codonfusion.autodiff import ShapeError, Tensor, grad_check, mul, sum_over_axis
from codonfusion.head import STRATEGY_CHANNELS, TextCnnParams, textcnn_forward


def pooled_oracle(x, weight, bias):
    """Independent enumeration: relu conv response per window, max per channel."""
    c_out, _, k = weight.shape
    acts = np.full(c_out, -np.inf)
    for start in range(x.shape[0] - k + 1):
        window = x[start:start + k]
        for o in range(c_out):
            v = sum(window[j] @ weight[o, :, j] for j in range(k)) + bias[o]
            acts[o] = max(acts[o], max(v, 0.0))
    return acts


def bank_outputs(params, x):
    """The head's own pre-dropout pooled activations, one vector per bank."""
    from codonfusion.autodiff import conv1d, global_max_pool, relu
    outs = []
    for w, b in zip(params.conv_weights, params.conv_biases):
        outs.append(global_max_pool(relu(conv1d(Tensor(x), w) + b)).data)
    return outs


class TestForward:
    def test_regression_output_width_one(self):
        rng = np.random.default_rng(0)
        params = TextCnnParams(rng, d_in=6, channels=4, targets=1)
        out = textcnn_forward(Tensor(rng.standard_normal((8, 6))), params)
        assert out.shape == (1,)

    def test_classification_output_width(self):
        rng = np.random.default_rng(1)
        params = TextCnnParams(rng, d_in=6, channels=4, targets=3)
        out = textcnn_forward(Tensor(rng.standard_normal((8, 6))), params)
        assert out.shape == (3,)

    def test_zero_input_zero_bias_predicts_zero(self):
        rng = np.random.default_rng(2)
        params = TextCnnParams(rng, d_in=5, channels=3)
        for b in params.conv_biases:
            b.data[:] = 0.0
        params.out.bias.data[:] = 0.0
        out = textcnn_forward(Tensor(np.zeros((7, 5))), params)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_short_sequence_instructs_padding(self):
        rng = np.random.default_rng(3)
        params = TextCnnParams(rng, d_in=4, channels=2)
        with pytest.raises(ShapeError, match="pad the fused sequence upstream"):
            textcnn_forward(Tensor(np.zeros((4, 4))), params)

    def test_finite_output_for_finite_input(self):
        rng = np.random.default_rng(4)
        params = TextCnnParams(rng, d_in=4, channels=8)
        out = textcnn_forward(Tensor(rng.standard_normal((30, 4)) * 100), params)
        assert np.isfinite(out.data).all()

    def test_strategy_channel_defaults(self):
        assert STRATEGY_CHANNELS["mil"] == 1280
        assert STRATEGY_CHANNELS["cross"] == 100
        assert STRATEGY_CHANNELS["concat"] == 256


class TestMaxPooling:
    def test_banks_match_window_oracle(self):
        rng = np.random.default_rng(5)
        params = TextCnnParams(rng, d_in=4, channels=3)
        x = rng.standard_normal((9, 4))
        for got, w, b in zip(bank_outputs(params, x), params.conv_weights, params.conv_biases):
            np.testing.assert_allclose(got, pooled_oracle(x, w.data, b.data), atol=1e-12)

    def test_duplicating_periodic_sequence_keeps_maxima(self):
        # for a periodic sequence every window of [x; x] already occurs in x,
        # so the doubled sequence pools to exactly the same bank maxima
        rng = np.random.default_rng(6)
        params = TextCnnParams(rng, d_in=4, channels=3)
        y = rng.standard_normal((5, 4))
        x = np.vstack([y, y])
        xx = np.vstack([x, x])
        for a, b in zip(bank_outputs(params, x), bank_outputs(params, xx)):
            np.testing.assert_allclose(a, b, atol=1e-12)
        for w, bias, got in zip(params.conv_weights, params.conv_biases, bank_outputs(params, xx)):
            np.testing.assert_allclose(got, pooled_oracle(x, w.data, bias.data), atol=1e-12)

    @given(st.integers(0, 10_000), st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_appending_positions_never_lowers_activations(self, seed, extra):
        rng = np.random.default_rng(seed)
        params = TextCnnParams(rng, d_in=3, channels=2)
        x = rng.standard_normal((6, 3))
        longer = np.vstack([x, rng.standard_normal((extra, 3))])
        for short, grown in zip(bank_outputs(params, x), bank_outputs(params, longer)):
            assert np.all(grown >= short - 1e-12)


class TestGradients:
    def test_gradcheck_dropout_frozen(self):
        rng = np.random.default_rng(7)
        params = TextCnnParams(rng, d_in=4, channels=2)
        x = Tensor(rng.standard_normal((8, 4)), requires_grad=True)
        named = {p.name: p for p in params.parameters()}
        named["x"] = x

        def build():
            out = textcnn_forward(x, params, train=False)
            return sum_over_axis(mul(out, out))

        report = grad_check(build, named, tol=1e-4)
        assert report.passed, report
