"""Parameters, a small Module base class and the three layers the networks use."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf.  Optimizers never touch a frozen parameter."""

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(np.array(data, copy=True), requires_grad=True, name=name)
        self.frozen = frozen


class Module:
    training = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield f"{prefix}{name}", value
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self, frozen: bool = True) -> "Module":
        for p in self.parameters():
            p.frozen = frozen
            p.requires_grad = not frozen
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if strict and missing:
            raise KeyError(f"missing entries in state: {sorted(missing)}")
        for name, value in state.items():
            target = params[name].data if name in params else buffers.get(name)
            if target is None:
                if strict:
                    raise KeyError(f"unexpected entry {name!r}")
                continue
            if target.shape != np.shape(value):
                raise ValueError(f"{name}: shape {np.shape(value)} vs {target.shape}")
            target[...] = value

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for name, buf in list(m._buffers.items()):
                m.register_buffer(name, buf.astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1, rng=None, dtype=np.float32,
                 bias: bool = True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        std = np.sqrt(2.0 / (c_in * 9))  # He init
        self.weight = Parameter(rng.normal(0.0, std, (c_out, c_in, 3, 3)).astype(dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None
        self.stride = stride

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=1)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class ConvBNReLU(Module):
    def __init__(self, c_in, c_out, stride=1, rng=None, dtype=np.float32):
        super().__init__()
        # batch norm's mean subtraction would cancel a conv bias
        self.conv = Conv2d(c_in, c_out, stride, rng, dtype, bias=False)
        self.bn = BatchNorm2d(c_out, dtype=dtype)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))
