"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tensor, backward

DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-8


def finite_diff_check(f: Callable[[Tensor], Tensor], point: np.ndarray,
                      step: float = DEFAULT_STEP,
                      floor: float = DEFAULT_FLOOR) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps one tensor to a scalar tensor. The analytic gradient comes from
    a reverse sweep at `point` (promoted to float64); the numeric gradient
    perturbs every coordinate by +-step. Per-coordinate relative error is
    |a - n| / max(|a|, |n|, floor), so a function with an exactly zero
    gradient scores 0.0.
    """
    base = np.asarray(point, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    backward(f(leaf))
    analytic = leaf.grad.copy()

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        hi = float(f(Tensor(base.copy())).data)
        flat[i] = saved - step
        lo = float(f(Tensor(base.copy())).data)
        flat[i] = saved
        num_flat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
