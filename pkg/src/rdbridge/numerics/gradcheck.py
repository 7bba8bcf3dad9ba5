"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..exceptions import ContractError
from .tensor import Tensor


def finite_diff_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor],
                      eps: float = 1e-5, *, max_components: int | None = None,
                      rng: np.random.Generator | None = None, stencil: int = 2) -> float:
    """Compare tape gradients of scalar ``f`` against central differences.

    Args:
        f: callable taking the tensor(s) in ``x`` and returning a scalar Tensor.
        x: one tensor or a sequence of tensors to differentiate against.
            They are perturbed in place and restored.
        eps: central-difference step.
        max_components: if given, check only this many randomly chosen
            components per input (drawn with ``rng``).
        stencil: 2 for ``(f(x+h) - f(x-h)) / 2h``; 4 for the fourth-order
            central stencil, which tolerates a larger ``eps`` and so loses
            less to round-off on small gradient components.

    Returns:
        max over checked components of
        ``|analytic - numeric| / (|analytic| + |numeric| + 1e-12)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.zero_grad()
    out = f(*xs)
    if out.size != 1:
        raise ContractError(f"finite_diff_check needs a scalar function, got shape {out.shape}")
    out.backward()
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for t in xs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_components is not None and flat.size > max_components:
            idx = rng.choice(flat.size, size=max_components, replace=False)
        for i in idx:
            orig = flat[i]

            def at(offset):
                flat[i] = orig + offset
                return f(*xs).item()

            if stencil == 2:
                num = (at(eps) - at(-eps)) / (2.0 * eps)
            else:
                num = (8.0 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12.0 * eps)
            flat[i] = orig
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - num) / (abs(a) + abs(num) + 1e-12))
    return worst
