"""
Minimal module system on top of the tensor core.
Parameters and buffers are discovered from attributes in assignment order.
"""

import logging
from typing import Dict, Iterator, Tuple

import numpy as np

from .config import ConfigError
from .tensor import Tensor, ShapeError, conv1d

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Parameter:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Parameter(rng.uniform(-bound, bound, size=shape))


class Module:
    """Base class: named parameters, buffers and train/eval mode."""

    def __init__(self):
        self.training = True
        self._buffer_names: Tuple[str, ...] = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, np.asarray(value, dtype=np.float64))
        if name not in self._buffer_names:
            self._buffer_names = self._buffer_names + (name,)

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Dict[str, Parameter]:
        params: Dict[str, Parameter] = {}
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                params[f"{prefix}{name}"] = value
        for name, child in self._children():
            params.update(child.named_parameters(f"{prefix}{name}."))
        return params

    def named_buffers(self, prefix: str = "") -> Dict[str, np.ndarray]:
        buffers = {f"{prefix}{name}": getattr(self, name) for name in self._buffer_names}
        for name, child in self._children():
            buffers.update(child.named_buffers(f"{prefix}{name}."))
        return buffers

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.named_parameters().values()))

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def state_dict(self) -> Dict[str, Dict[str, np.ndarray]]:
        return {
            "params": {k: p.data.copy() for k, p in self.named_parameters().items()},
            "buffers": {k: b.copy() for k, b in self.named_buffers().items()},
        }

    def load_state_dict(self, state: Dict[str, Dict[str, np.ndarray]]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state.get("params", {}))
        unexpected = set(state.get("params", {})) - set(params)
        if missing or unexpected:
            raise ConfigError(
                f"State mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}"
            )
        for name, p in params.items():
            value = np.asarray(state["params"][name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ShapeError(f"Parameter '{name}': stored {value.shape} vs model {p.data.shape}")
            p.data[...] = value
        buffers = state.get("buffers", {})
        for module_prefix, module in self._named_modules():
            for name in module._buffer_names:
                key = f"{module_prefix}{name}"
                if key in buffers:
                    current = getattr(module, name)
                    setattr(module, name, np.asarray(buffers[key], dtype=np.float64).reshape(current.shape))

    def _named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children():
            yield from child._named_modules(f"{prefix}{name}.")


class Linear(Module):
    """y = x @ W + b with W of shape (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = uniform_init(rng, (in_features, out_features), in_features)
        self.bias = uniform_init(rng, (out_features,), in_features) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Conv1d(Module):
    """Dilated 1-D convolution over (..., C_in, T) inputs."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        dilation: int = 1,
        padding: str = "causal",
        bias: bool = True,
    ):
        super().__init__()
        if kernel_size < 1:
            raise ConfigError(f"Conv1d: kernel_size must be >= 1, got {kernel_size}")
        fan_in = in_channels * kernel_size
        self.weight = uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in)
        self.bias = uniform_init(rng, (out_channels,), fan_in) if bias else None
        self.dilation = dilation
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = conv1d(x, self.weight, self.dilation, self.padding)
        if self.bias is None:
            return out
        return out + self.bias.reshape((self.bias.shape[0], 1))


class BatchNorm(Module):
    """Batch normalization over (M, C, T) inputs, statistics per channel."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        channels = self.gamma.shape[0]
        if x.ndim != 3 or x.shape[1] != channels:
            raise ShapeError(f"BatchNorm: expected (M, {channels}, T), got {x.shape}")
        if self.training:
            mu = x.mean(axis=(0, 2), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2), keepdims=True)
            normalized = centered * (var + self.eps) ** -0.5
            count = x.shape[0] * x.shape[2]
            unbiased = var.data.reshape(-1) * (count / max(count - 1, 1))
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.data.reshape(-1)
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mu = self.running_mean.reshape(1, channels, 1)
            scale = 1.0 / np.sqrt(self.running_var.reshape(1, channels, 1) + self.eps)
            normalized = (x - mu) * scale
        return normalized * self.gamma.reshape((1, channels, 1)) + self.beta.reshape((1, channels, 1))
