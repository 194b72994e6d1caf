"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], t: Tensor, step: float = 1e-6) -> np.ndarray:
    """d f() / d t by central differences, perturbing ``t.data`` in place."""
    if not t.data.flags.c_contiguous:
        t.data = np.ascontiguousarray(t.data)
    grad = np.zeros(t.data.shape, dtype=np.float64)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f().data)
        flat[i] = orig - step
        lo = float(f().data)
        flat[i] = orig
        grad.flat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5, scale_floor: float = 1e-4
) -> float:
    """max |a - n| / max(|a|, |n|, f) over all entries.

    ``f`` is the larger of ``floor`` and ``scale_floor`` times the largest
    gradient entry of the tensor.  A float64 forward pass through a few
    dozen ops is accurate to roughly 1e-15..1e-14 relative to the loss;
    divided by the 2e-6 width of a central difference that leaves noise up to
    ~1e-9 * |f| in each numeric entry.  Entries below ``floor`` are therefore held
    to an absolute error of ``floor`` times the tolerance, and entries far
    below the tensor's own scale are judged against that scale.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    f = max(floor, scale_floor * float(max(np.abs(a).max(), np.abs(n).max())))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), f)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(
    f: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-6
) -> dict[int, float]:
    """Compare tape gradients of scalar ``f()`` with finite differences.

    Returns the max relative error for each tensor, keyed by position.  The
    absolute floor grows with |f| because so does the roundoff in f.
    """
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    out = f()
    floor = 1e-5 * max(1.0, abs(float(out.data)))
    backward(out)
    errors = {}
    for i, t in enumerate(tensors):
        analytic = t.grad.copy()
        numeric = numerical_grad(f, t, step)
        errors[i] = relative_error(analytic, numeric, floor=floor)
    return errors
