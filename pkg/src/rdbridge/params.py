"""Walking and rebuilding nested parameter dataclasses."""
from __future__ import annotations

import dataclasses
from typing import Callable, Iterator

import numpy as np

from .numerics import Tensor, get_default_dtype


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` for every Tensor reachable in ``obj``.

    Walks dataclass fields, lists/tuples (indexed by position) and dicts.
    Non-tensor leaves (ints, floats) are skipped.
    """
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for k, item in obj.items():
            yield from named_tensors(item, f"{prefix}.{k}" if prefix else str(k))


def map_tensors(obj, fn: Callable[[str, Tensor], Tensor], prefix: str = ""):
    """Structural copy of ``obj`` with each Tensor replaced by ``fn(name, t)``."""
    if isinstance(obj, Tensor):
        return fn(prefix, obj)
    if dataclasses.is_dataclass(obj):
        changes = {
            f.name: map_tensors(getattr(obj, f.name), fn, f"{prefix}.{f.name}" if prefix else f.name)
            for f in dataclasses.fields(obj)
        }
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, list):
        return [map_tensors(x, fn, f"{prefix}.{i}" if prefix else str(i)) for i, x in enumerate(obj)]
    if isinstance(obj, tuple):
        return tuple(map_tensors(x, fn, f"{prefix}.{i}" if prefix else str(i)) for i, x in enumerate(obj))
    if isinstance(obj, dict):
        return {k: map_tensors(x, fn, f"{prefix}.{k}" if prefix else str(k)) for k, x in obj.items()}
    return obj


def frozen_copy(obj):
    """Deep copy with every tensor detached (``requires_grad=False``)."""
    return map_tensors(obj, lambda _, t: Tensor(t.data.copy(), requires_grad=False))


def count_parameters(obj) -> int:
    return int(sum(t.size for _, t in named_tensors(obj)))


def param(rng: np.random.Generator, shape, scale: float | None = None, requires_grad: bool = True) -> Tensor:
    """Gaussian init; default scale is ``1/sqrt(fan_in)`` with fan_in = shape[0]."""
    if scale is None:
        scale = 1.0 / np.sqrt(shape[0])
    return Tensor(rng.normal(0.0, scale, size=shape).astype(get_default_dtype()), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = True) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_default_dtype()), requires_grad=requires_grad)
