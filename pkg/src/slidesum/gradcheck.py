"""Finite-difference verification of hand-derived layer gradients.

A random fixed projection turns any layer output into a scalar, whose
analytic gradient comes from the layer's backward pass and whose numeric
gradient comes from central differences.  Everything runs in double
precision; callers are responsible for keeping inputs away from
non-differentiable points (relu at 0, pooling ties).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor

REL_ERR_FLOOR = 1e-8


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERR_FLOOR)


def _coords(arr: np.ndarray, max_coords: int | None, rng: np.random.Generator):
    total = arr.size
    if max_coords is None or total <= max_coords:
        return range(total)
    return rng.choice(total, size=max_coords, replace=False)


def grad_check(
    layer,
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every input coordinate and every parameter coordinate (or a
    random subset of ``max_coords`` per array when given).  The layer must
    expose ``forward_cached``, ``backward``, and ``parameters``.
    """
    if isinstance(inputs, Tensor):
        inputs = (inputs,)
    inputs = tuple(as_tensor(t).astype("double") for t in inputs)
    params = {name: t.astype("double") for name, t in layer.parameters().items()}
    # Rebind doubled parameters onto the layer (weight attrs follow dict keys).
    attr_for = {"w": "weight", "b": "bias"}
    for name, t in params.items():
        setattr(layer, attr_for[name], t)

    rng = np.random.default_rng(seed)

    def run_forward():
        out = layer.forward_cached(*inputs)
        return out

    y, cache = run_forward()
    projection = rng.standard_normal(y.shape)

    def loss() -> float:
        out, _ = layer.forward_cached(*inputs)
        return float((out.data * projection).sum())

    dx, grads = layer.backward(Tensor(projection, precision="double"), cache)
    if isinstance(dx, Tensor):
        dx = (dx,)

    worst = 0.0
    checked: list[tuple[np.ndarray, np.ndarray]] = []
    for t, g in zip(inputs, dx):
        checked.append((t.data, g.data))
    for name in params:
        checked.append((params[name].data, grads[name].data))

    for arr, grad in checked:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in _coords(arr, max_coords, rng):
            original = flat[i]
            flat[i] = original + eps
            plus = loss()
            flat[i] = original - eps
            minus = loss()
            flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, relative_error(float(gflat[i]), numeric))
    return worst
