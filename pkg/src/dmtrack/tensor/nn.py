"""Parameter containers and the linear layer used by the learnable modules."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .core import Tensor, matmul


class ParamStore:
    """Ordered, named collection of leaf tensors.

    Names are dotted paths (``"deform_mamba.block0.in_proj.weight"``); the
    order of insertion is the serialization order.
    """

    def __init__(self, prefix: str = "") -> None:
        self.prefix = prefix
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        full = f"{self.prefix}{name}"
        if full in self._params:
            raise KeyError(f"duplicate parameter {full!r}")
        t = Tensor(value, requires_grad=True, name=full)
        self._params[full] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[f"{self.prefix}{name}"]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = [k for k in self._params if k not in state]
        if strict and missing:
            raise KeyError(f"checkpoint lacks parameters: {missing[:5]}")
        for k, p in self._params.items():
            if k not in state:
                continue
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{k}: checkpoint shape {arr.shape} != parameter shape {p.data.shape}")
            p.data = arr.copy()

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())


class Linear:
    """``y = x @ W + b`` with ``W`` stored as (in_features, out_features)."""

    def __init__(self, store: ParamStore, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator, bias: bool = True) -> None:
        bound = 1.0 / np.sqrt(in_features)
        self.weight = store.add(f"{name}.weight", rng.uniform(-bound, bound, (in_features, out_features)))
        self.bias = store.add(f"{name}.bias", rng.uniform(-bound, bound, out_features)) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def __call__(self, x) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y
