"""Named parameter store shared by every recursive stage."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import InvalidArgument, ShapeMismatch
from .tensor import Tensor


class ParamRegistry:
    """Trainable tensors plus non-trainable buffers (batch-norm running stats).

    Iteration order is creation order, so counts, flattening and the weights
    file layout are reproducible.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.buffers: OrderedDict[str, np.ndarray] = OrderedDict()
        self._groups: dict[str, dict[str, Tensor]] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise InvalidArgument(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        self._groups.clear()
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise InvalidArgument(f"duplicate buffer name {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def group(self, prefix: str) -> dict[str, Tensor]:
        """Sub-dict of parameters under ``prefix.`` with the prefix stripped."""
        if prefix not in self._groups:
            p = prefix + "."
            self._groups[prefix] = {k[len(p) :]: v for k, v in self.params.items() if k.startswith(p)}
        return self._groups[prefix]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict(
            (k, t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self.params.items()
        )

    def state(self) -> OrderedDict[str, np.ndarray]:
        """All tensors (params then buffers) by name; used for serialisation."""
        out: OrderedDict[str, np.ndarray] = OrderedDict((k, t.data) for k, t in self.params.items())
        out.update(self.buffers)
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state()
        missing = [k for k in expected if k not in state]
        extra = [k for k in state if k not in expected]
        if missing or extra:
            raise ShapeMismatch(f"weights do not match model: missing={missing[:5]} extra={extra[:5]}")
        for k, ref in expected.items():
            if tuple(state[k].shape) != ref.shape:
                raise ShapeMismatch(f"{k}: file shape {tuple(state[k].shape)} != model shape {ref.shape}")
        for k, t in self.params.items():
            t.data = np.array(state[k], dtype=self.dtype)
        for k in self.buffers:
            self.buffers[k][...] = state[k]

    def copy(self) -> "ParamRegistry":
        new = ParamRegistry(self.dtype)
        for k, t in self.params.items():
            new.add(k, t.data.copy())
        for k, b in self.buffers.items():
            new.add_buffer(k, b.copy())
        return new

    def astype(self, dtype) -> "ParamRegistry":
        new = ParamRegistry(dtype)
        for k, t in self.params.items():
            new.add(k, t.data)
        for k, b in self.buffers.items():
            new.add_buffer(k, b)
        return new


def count_params(reg: ParamRegistry) -> int:
    return int(sum(t.data.size for t in reg.params.values()))


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
