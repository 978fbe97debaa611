"""Fixed convolutional prediction head shared by every fusion strategy.

Three parallel convolution banks (kernel sizes 3, 4, 5) slide over the
fused sequence; each bank is ReLU-activated and globally max pooled, the
pooled features are concatenated, dropped out at train time, and mapped
linearly to the task output. Convolutions are unpadded, so the sequence
must be at least 5 positions long.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Linear,
    ShapeError,
    Tensor,
    concat_feature,
    conv1d,
    dropout,
    global_max_pool,
    relu,
)

__all__ = ["KERNEL_SIZES", "STRATEGY_CHANNELS", "TextCnnParams", "textcnn_forward"]

KERNEL_SIZES = (3, 4, 5)

# per-strategy channel defaults; anything unlisted falls back to 256
STRATEGY_CHANNELS = {
    "mil": 1280,
    "mil_token": 1280,
    "cross": 100,
    "concat": 256,
    "vanilla_concat": 256,
}


class TextCnnParams:
    """Convolution banks plus the final linear read-out."""

    def __init__(self, rng: np.random.Generator, d_in: int, channels: int = 256,
                 targets: int = 1, dropout_rate: float = 0.2):
        self.d_in = d_in
        self.channels = channels
        self.targets = targets
        self.dropout_rate = dropout_rate
        self.conv_weights = []
        self.conv_biases = []
        for k in KERNEL_SIZES:
            bound = 1.0 / np.sqrt(d_in * k)
            self.conv_weights.append(Tensor(
                rng.uniform(-bound, bound, size=(channels, d_in, k)),
                requires_grad=True, name=f"head.conv{k}.weight"))
            self.conv_biases.append(Tensor(
                rng.uniform(-bound, bound, size=(channels,)),
                requires_grad=True, name=f"head.conv{k}.bias"))
        self.out = Linear(rng, len(KERNEL_SIZES) * channels, targets, "head.out")

    def parameters(self) -> list[Tensor]:
        return list(self.conv_weights) + list(self.conv_biases) + self.out.parameters()


def textcnn_forward(fused: Tensor, params: TextCnnParams, train: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Run the head over a fused (positions x features) sequence."""
    t_prime, d = fused.shape
    if d != params.d_in:
        raise ShapeError("textcnn", f"feature width {d} != head width {params.d_in}")
    if t_prime < max(KERNEL_SIZES):
        raise ShapeError(
            "textcnn",
            f"sequence length {t_prime} is shorter than the largest kernel "
            f"{max(KERNEL_SIZES)}; pad the fused sequence upstream")
    pooled = []
    for w, b, k in zip(params.conv_weights, params.conv_biases, KERNEL_SIZES):
        bank = relu(conv1d(fused, w) + b)
        pooled.append(global_max_pool(bank))
    features = concat_feature(pooled)
    features = dropout(features, params.dropout_rate, train=train, rng=rng)
    return params.out(features)
