"""Central finite-difference check of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-6,
                       indices=None) -> np.ndarray:
    """Central differences for the flat ``indices`` of ``param`` (all by default); others stay 0."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn().item()
        flat[i] = orig - h
        down = loss_fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6,
               floor: float = 1e-3, max_entries: int | None = None, seed: int = 0) -> float:
    """Largest relative deviation between analytic and numeric gradients.

    Each entry's error is ``|a - n| / max(|a|, |n|, floor * G)`` where ``G`` is
    the largest numeric gradient magnitude over all checked entries; the floor
    keeps entries whose true gradient is ~0 from being judged on the
    cancellation noise of the finite difference.
    ``max_entries`` limits each parameter to a seeded random sample of entries,
    which keeps checks of wide layers affordable.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    pairs = []
    for p, a in zip(params, analytic):
        size = p.data.size
        if max_entries is None or size <= max_entries:
            idx = np.arange(size)
        else:
            idx = np.sort(rng.choice(size, max_entries, replace=False))
        n = numerical_gradient(loss_fn, p, h, idx).reshape(-1)[idx]
        pairs.append((a.reshape(-1)[idx], n))
    for p in params:
        p.grad = None
    if not pairs:
        return 0.0
    a = np.concatenate([x for x, _ in pairs])
    n = np.concatenate([y for _, y in pairs])
    scale = max(float(np.abs(n).max(initial=0.0)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float((np.abs(a - n) / denom).max(initial=0.0))
