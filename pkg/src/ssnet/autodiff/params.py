"""Parameter containers for the layer set, with Glorot-uniform initializers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ssnet.autodiff.tensor import Tensor


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _param(values) -> Tensor:
    return Tensor(values, requires_grad=True)


@dataclass
class ConvParams:
    weight: Tensor  # [out_maps, in_channels, kernel_size]
    bias: Tensor  # [out_maps]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @classmethod
    def init(cls, rng, out_maps, in_channels, kernel_size, dtype=np.float32):
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        w = glorot_uniform(
            rng, (out_maps, in_channels, kernel_size), in_channels * kernel_size, out_maps * kernel_size, dtype
        )
        return cls(_param(w), _param(np.zeros(out_maps, dtype=dtype)))


@dataclass
class LSTMParams:
    """Gate-stacked weights, order (forget, input, candidate, output).

    ``weight[g]`` is [hidden, hidden + input] and multiplies [h_prev, x_t].
    """

    weight: Tensor  # [4, hidden, hidden + input]
    bias: Tensor  # [4, hidden]

    @property
    def hidden_size(self) -> int:
        return self.weight.shape[1]

    @property
    def input_size(self) -> int:
        return self.weight.shape[2] - self.weight.shape[1]

    @classmethod
    def init(cls, rng, input_size, hidden_size, dtype=np.float32, forget_bias=1.0):
        # Glorot per gate; the recurrent block gets its own plain Glorot draw
        w = np.empty((4, hidden_size, hidden_size + input_size), dtype=dtype)
        for g in range(4):
            w[g, :, :hidden_size] = glorot_uniform(rng, (hidden_size, hidden_size), hidden_size, hidden_size, dtype)
            w[g, :, hidden_size:] = glorot_uniform(rng, (hidden_size, input_size), input_size, hidden_size, dtype)
        b = np.zeros((4, hidden_size), dtype=dtype)
        b[0] = forget_bias
        return cls(_param(w), _param(b))


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-3

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def init(cls, features, dtype=np.float32, momentum=0.99, eps=1e-3):
        return cls(
            _param(np.ones(features, dtype=dtype)),
            _param(np.zeros(features, dtype=dtype)),
            np.zeros(features, dtype=dtype),
            np.ones(features, dtype=dtype),
            momentum,
            eps,
        )


@dataclass
class DenseParams:
    weight: Tensor  # [in, out]
    bias: Tensor  # [out]

    @classmethod
    def init(cls, rng, in_features, out_features, dtype=np.float32):
        w = glorot_uniform(rng, (in_features, out_features), in_features, out_features, dtype)
        return cls(_param(w), _param(np.zeros(out_features, dtype=dtype)))
