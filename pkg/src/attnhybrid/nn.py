"""Layer/module containers over the autodiff tensors.

A ``Module`` owns named parameters and named submodules and exposes the usual
traversal helpers (``parameters``, ``named_parameters``, ``state_dict``).
Initialization draws from an explicit ``numpy.random.Generator`` — no global
RNG state — so every network build is reproducible from its seed.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator

import numpy as np

from .tensor import Tensor, batch_norm, conv2d, layer_norm, linear

__all__ = [
    "Module",
    "ModuleList",
    "Conv2d",
    "Linear",
    "BatchNorm2d",
    "LayerNorm",
    "Parameter",
    "capture_activations",
]


def Parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# Activation capture: explanation code needs intermediate feature maps without
# threading return values through every forward. Modules that publish
# activations call ``_publish``; inside a ``capture_activations`` block those
# tensors are collected by name.
_capture_sink: dict[str, Tensor] | None = None


@contextlib.contextmanager
def capture_activations():
    """Collect published intermediate activations during forwards in the block."""
    global _capture_sink
    prev = _capture_sink
    _capture_sink = {}
    try:
        yield _capture_sink
    finally:
        _capture_sink = prev


def _publish(name: str, value: Tensor) -> None:
    if _capture_sink is not None:
        _capture_sink[name] = value


class Module:
    """Base class: attribute assignment registers parameters and submodules."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value) -> None:
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    # -- traversal ---------------------------------------------------------

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for mod in self._modules.values():
            yield from mod.modules()

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix[:-1] if prefix else "", self
        for name, mod in self._modules.items():
            yield from mod.named_modules(prefix + name + ".")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        for mod in self.modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # -- persistence ---------------------------------------------------------

    def _named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, mod in self._modules.items():
            yield from mod._named_buffers(prefix + name + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buf in self._named_buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = {name: p for name, p in self.named_parameters()}
        buffers = {name: (mod, bname) for name, (mod, bname) in self._buffer_owners()}
        missing = (set(expected) | set(buffers)) - set(state)
        unexpected = set(state) - set(expected) - set(buffers)
        if missing or unexpected:
            raise ValueError(
                f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}"
            )
        for name, p in expected.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: expected {p.data.shape}, got {arr.shape}"
                )
            p.data = arr.copy()
        for name, (mod, bname) in buffers.items():
            arr = np.asarray(state[name], dtype=np.float64)
            current = getattr(mod, bname)
            if arr.shape != current.shape:
                raise ValueError(
                    f"shape mismatch for {name}: expected {current.shape}, got {arr.shape}"
                )
            object.__setattr__(mod, bname, arr.copy())

    def _buffer_owners(self, prefix: str = "") -> Iterator[tuple[str, tuple["Module", str]]]:
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, (self, name)
        for name, mod in self._modules.items():
            yield from mod._buffer_owners(prefix + name + ".")

    # -- call --------------------------------------------------------------

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._items: list[Module] = []
        for mod in mods:
            self.append(mod)

    def append(self, mod: Module) -> None:
        self._modules[str(len(self._items))] = mod
        self._items.append(mod)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


class Conv2d(Module):
    """Standard 2-D convolution layer with He-normal weight init."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
        zero_init: bool = False,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        if zero_init:
            w = np.zeros(shape)
        else:
            fan_in = (in_channels // groups) * kernel_size * kernel_size
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(
            x,
            self.weight,
            self.bias,
            stride=self.stride,
            padding=self.padding,
            groups=self.groups,
        )


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            w = np.zeros((out_features, in_features))
        else:
            bound = np.sqrt(1.0 / in_features)
            w = rng.uniform(-bound, bound, (out_features, in_features))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(num_features))
        self.bias = Parameter(np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(
            x,
            self.weight,
            self.bias,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, eps=self.eps)
