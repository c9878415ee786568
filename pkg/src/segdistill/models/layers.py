"""Parameterised building blocks: conv/BN/activation units and inverted residuals."""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Module:
    """Holds named parameters and batch-norm buffers under a dotted prefix."""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, ops.RunningStats] = {}
        self.children: list[Module] = []

    def add_param(self, key: str, value: np.ndarray) -> Tensor:
        full = f"{self.name}.{key}"
        t = Tensor(value, requires_grad=True, name=full)
        self.params[full] = t
        return t

    def add_child(self, child: "Module") -> "Module":
        self.children.append(child)
        return child

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.params)
        for c in self.children:
            out.update(c.named_parameters())
        return out

    def named_buffers(self) -> dict[str, ops.RunningStats]:
        out = dict(self.buffers)
        for c in self.children:
            out.update(c.named_buffers())
        return out


class BatchNorm(Module):
    def __init__(self, name: str, channels: int):
        super().__init__(name)
        self.scale = self.add_param("scale", np.ones(channels, np.float32))
        self.shift = self.add_param("shift", np.zeros(channels, np.float32))
        self.stats = ops.RunningStats.fresh(channels)
        self.buffers[name] = self.stats

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batch_norm(x, self.scale, self.shift, self.stats, "train" if training else "infer")


class ConvUnit(Module):
    """conv2d, optional batch norm, activation."""

    def __init__(self, name, rng, cin, cout, kernel=3, stride=1, act="relu", bn=True, bias=None):
        super().__init__(name)
        self.stride = stride
        self.act = act
        self.kernel = self.add_param("kernel", he_normal(rng, (kernel, kernel, cin, cout), kernel * kernel * cin))
        use_bias = (not bn) if bias is None else bias
        self.bias = self.add_param("bias", np.zeros(cout, np.float32)) if use_bias else None
        self.bn = self.add_child(BatchNorm(f"{name}.bn", cout)) if bn else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = ops.conv2d(x, self.kernel, self.bias, stride=self.stride, padding="same")
        if self.bn is not None:
            y = self.bn(y, training)
        return ops.activation(y, self.act)


class DepthwiseUnit(Module):
    def __init__(self, name, rng, channels, stride=1, act="relu6"):
        super().__init__(name)
        self.stride = stride
        self.act = act
        self.kernel = self.add_param("kernel", he_normal(rng, (3, 3, channels), 9))
        self.bn = self.add_child(BatchNorm(f"{name}.bn", channels))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = ops.depthwise_conv2d(x, self.kernel, stride=self.stride, padding="same")
        return ops.activation(self.bn(y, training), self.act)


class InvertedResidual(Module):
    """1x1 expand -> 3x3 depthwise -> 1x1 linear projection, with shortcut when shapes allow."""

    def __init__(self, name, rng, cin, cout, expansion, stride):
        super().__init__(name)
        hidden = cin * expansion
        self.expand = (
            self.add_child(ConvUnit(f"{name}.expand", rng, cin, hidden, kernel=1, act="relu6"))
            if expansion != 1 else None
        )
        self.depthwise = self.add_child(DepthwiseUnit(f"{name}.dw", rng, hidden, stride=stride))
        self.project = self.add_child(ConvUnit(f"{name}.project", rng, hidden, cout, kernel=1, act="linear"))
        self.use_residual = stride == 1 and cin == cout

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = x if self.expand is None else self.expand(x, training)
        y = self.project(self.depthwise(y, training), training)
        return ops.residual_add(x, y) if self.use_residual else y


class TransposeUnit(Module):
    """Stride-2 transposed conv, batch norm, relu (one decoder upsampling step)."""

    def __init__(self, name, rng, cin, cout, kernel=3, stride=2):
        super().__init__(name)
        self.stride = stride
        self.kernel = self.add_param("kernel", he_normal(rng, (kernel, kernel, cout, cin), kernel * kernel * cin))
        self.bn = self.add_child(BatchNorm(f"{name}.bn", cout))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = ops.transpose_conv2d(x, self.kernel, stride=self.stride)
        return ops.activation(self.bn(y, training), "relu")


class Dense(Module):
    def __init__(self, name, rng, din, dout):
        super().__init__(name)
        self.weights = self.add_param("weights", glorot_uniform(rng, (din, dout), din, dout))
        self.bias = self.add_param("bias", np.zeros(dout, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weights, self.bias)
