"""Shared helpers for named parameter groups.

Every network parameter container exposes ``named()`` returning its
tensors in a fixed order; these helpers implement init, cloning,
freezing and counting on top of that protocol.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int,
                 requires_grad: bool = True) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=requires_grad)


def zeros_param(shape, requires_grad: bool = True) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def named_arrays(group) -> dict[str, np.ndarray]:
    return {name: t.data for name, t in group.named()}


def clone_group(group, requires_grad: bool | None = None):
    """Deep copy of a parameter group; optionally override requires_grad."""
    copy = group.__class__.from_named(
        {name: t.data.copy() for name, t in group.named()})
    if requires_grad is not None:
        set_requires_grad(copy, requires_grad)
    return copy


def set_requires_grad(group, flag: bool) -> None:
    for _, t in group.named():
        t.requires_grad_(flag)


def zero_grads(group) -> None:
    for _, t in group.named():
        t.zero_grad()


def n_params(group) -> int:
    return sum(t.size for _, t in group.named())


def groups_equal(a, b) -> bool:
    """Bitwise equality of two parameter groups."""
    na, nb = dict(a.named()), dict(b.named())
    if na.keys() != nb.keys():
        return False
    return all(np.array_equal(na[k].data, nb[k].data) for k in na)
