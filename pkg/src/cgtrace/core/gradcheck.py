"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                   indices=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x.data`` in place.

    ``indices`` restricts the probe to a list of flat indices; other entries of
    the returned array are left at 0.
    """
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        old = flat[i]
        flat[i] = old + h
        fp = float(f().data)
        flat[i] = old - h
        fm = float(f().data)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor) elementwise, reduced by max."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradients(f: Callable[[], Tensor], inputs: list[Tensor], h: float = 1e-5,
                    max_probes: int | None = None, rng: np.random.Generator | None = None,
                    floor: float = 1e-6) -> float:
    """Worst relative error between backprop and finite differences over ``inputs``.

    With ``max_probes`` only that many random entries per input are probed.
    Differences below ``floor`` in absolute terms are treated as agreement.
    """
    for t in inputs:
        t.grad = None
    out = f()
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        idx = None
        if max_probes is not None and t.size > max_probes:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(t.size, size=max_probes, replace=False)
        gn = numerical_grad(f, t, h, idx)
        if idx is not None:
            ga = ga.reshape(-1)[idx]
            gn = gn.reshape(-1)[idx]
        worst = max(worst, relative_error(ga, gn, floor))
    return worst
