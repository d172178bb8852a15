"""Parameter containers: a small module system on top of the tensor ops."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .ops import ConvSpec
from .tensor import Tensor


class Module:
    """Base class that discovers parameters, buffers and submodules by attribute.

    Parameter names are dotted attribute paths (``branch1.block0.conv.weight``)
    and are stable, which is what the checkpoint format relies on.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{full}.{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_buffers(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_buffers(f"{full}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def modules(self):
        yield self
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, v.data) for k, v in self.named_parameters().items())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict) -> None:
        """Copy arrays into parameters/buffers in place; shapes must match exactly."""
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = list(params) + list(buffers)
        missing = [k for k in expected if k not in state]
        if missing:
            raise KeyError(f"missing entries in state: {missing[:5]}")
        for name in expected:
            target = params[name].data if name in params else buffers[name]
            src = np.asarray(state[name])
            if src.shape != target.shape:
                raise ValueError(
                    f"shape mismatch for '{name}': checkpoint {src.shape}, model {target.shape}"
                )
            target[...] = src

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.standard_normal(shape) * (gain * np.sqrt(2.0 / fan_in))


class Conv2d(Module):
    def __init__(self, spec: ConvSpec, rng: np.random.Generator | None = None, bias: bool = True,
                 gain: float = 1.0):
        self.spec = spec
        shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        w = he_normal(rng, shape, fan_in, gain) if rng is not None else np.zeros(shape)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(spec.out_channels), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None):
        w = rng.standard_normal((d_out, d_in)) * np.sqrt(1.0 / d_in) if rng is not None else np.zeros((d_out, d_in))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


def zero_parameters(module: Module) -> None:
    for p in module.parameters():
        p.data[...] = 0
