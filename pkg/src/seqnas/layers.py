"""Parameter-owning building blocks shared by the cell and the model."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, conv1d, mul, relu, sqrt, tmean

_NORM_EPS = 1e-5


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Weight tensor drawn from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class BatchNorm:
    """Per-channel normalization over (batch x time) on [batch, C, time].

    Train mode uses batch statistics; eval mode uses running averages
    maintained with momentum 0.1. gamma/beta are learnable.
    """

    def __init__(self, channels: int, momentum: float = 0.1):
        self.channels = channels
        self.momentum = momentum
        self.gamma = Tensor(np.ones((1, channels, 1)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1)), requires_grad=True)
        self.running_mean = np.zeros((1, channels, 1))
        self.running_var = np.ones((1, channels, 1))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mu = tmean(x, axis=(0, 2), keepdims=True)
            var = tmean(mul(x - mu, x - mu), axis=(0, 2), keepdims=True)
            self.running_mean += self.momentum * (mu.data - self.running_mean)
            self.running_var += self.momentum * (var.data - self.running_var)
            xhat = (x - mu) / sqrt(var + _NORM_EPS)
        else:
            scale = 1.0 / np.sqrt(self.running_var + _NORM_EPS)
            xhat = mul(x - Tensor(self.running_mean), Tensor(scale))
        return add(mul(xhat, self.gamma), self.beta)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ConvNorm:
    """ReLU -> 1x1 conv -> norm block mapping c_in to c_out channels.

    The preprocessing unit in front of each cell input. `use_relu` and
    `use_norm` exist so tests can configure the block down to an identity.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 use_relu: bool = True, use_norm: bool = True):
        self.use_relu = use_relu
        self.use_norm = use_norm
        self.weight = uniform_init(rng, (c_out, c_in, 1), fan_in=c_in)
        self.norm = BatchNorm(c_out) if use_norm else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = relu(x) if self.use_relu else x
        h = conv1d(h, self.weight, dilation=1, groups=1)
        if self.norm is not None:
            h = self.norm(h, training)
        return h

    def parameters(self):
        ps = [("conv", self.weight)]
        if self.norm is not None:
            ps += [("norm." + n, t) for n, t in self.norm.parameters()]
        return ps


class Linear:
    """Per-position affine map applied to the trailing feature axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (d_in, d_out), fan_in=d_in)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(x @ self.weight, self.bias)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]
