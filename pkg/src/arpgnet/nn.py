"""Parameter containers and small layers shared by the model."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .numerics import Tensor, conv2d, dropout, linear, prelu


def kaiming_init(shape, rng: np.random.Generator, fan_in: int | None = None, dtype=np.float32) -> Tensor:
    """He-normal draw: zero mean, variance ``2 / fan_in``.

    ``fan_in`` defaults to the product of all axes but the last (dense
    ``in x out`` layout); pass it explicitly for other layouts.
    """
    shape = tuple(int(s) for s in shape)
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Minimal parameter tree. Parameters and submodules are discovered from
    instance attributes in assignment order, which fixes the canonical order
    used by checkpoints."""

    training: bool = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for v in value:
                    if isinstance(v, Module):
                        yield from v.modules()


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = kaiming_init((n_in, n_out), rng, dtype=dtype)
        self.bias = zeros_param((n_out,), dtype)

    def __call__(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


class PReLU(Module):
    def __init__(self, init: float = 0.25, dtype=np.float32):
        self.slope = Tensor(np.array([init], dtype=dtype), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return prelu(x, self.slope)


class ConvBlock(Module):
    """3x3 stride-2 convolution followed by PReLU; halves each spatial side."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = kaiming_init((c_out, c_in, 3, 3), rng, fan_in=c_in * 9, dtype=dtype)
        self.bias = zeros_param((c_out,), dtype)
        self.act = PReLU(dtype=dtype)

    def __call__(self, x) -> Tensor:
        return self.act(conv2d(x, self.weight, self.bias, stride=2, padding=1))


class Dropout(Module):
    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        return dropout(x, self.rate, rng, training=self.training)
