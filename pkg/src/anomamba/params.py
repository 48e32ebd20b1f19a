"""Parameter registry, module base class, and the Adam update."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


class Module:
    """Minimal container: any Tensor / Module / list-of-Module attribute is
    collected into the dotted-name parameter map in declaration order."""

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor):
                out[key] = val
            elif isinstance(val, Module):
                out.update(val.named_params(f"{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{key}.{i}."))
                    elif isinstance(item, Tensor):
                        out[f"{key}.{i}"] = item
        return out


class ParamStore:
    """Named trainable tensors plus Adam moment slots.

    Frozen entries keep ``requires_grad=False`` so they can never collect a
    gradient, and the optimizer skips them.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()
        self.step_count: int = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def register(self, name: str, tensor: Tensor, frozen: bool = False) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = not frozen
        self.params[name] = tensor
        if frozen:
            self.frozen.add(name)
        return tensor

    def register_module(self, prefix: str, module: Module, frozen: bool = False) -> None:
        for name, t in module.named_params(f"{prefix}.").items():
            self.register(name, t, frozen=frozen)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def trainable(self):
        return ((n, t) for n, t in self.params.items() if n not in self.frozen)

    def checksum(self) -> int:
        import zlib

        crc = 0
        for name, t in self.params.items():
            crc = zlib.crc32(name.encode(), crc)
            crc = zlib.crc32(np.ascontiguousarray(t.data).tobytes(), crc)
        return crc


def adam_step(
    store: ParamStore,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over all unfrozen entries; clears grads."""
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.trainable():
        if p.grad is None:
            raise ShapeError(f"adam_step: no gradient for unfrozen parameter {name!r}")
        g = p.grad
        m = store.m.get(name)
        if m is None:
            m = store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
