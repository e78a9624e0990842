"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward


def numeric_grad(loss_fn: Callable[[], float], t: Tensor, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. ``t.data`` (optionally only at ``indices``)."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        old = flat[i]
        flat[i] = old + eps
        up = loss_fn()
        flat[i] = old - eps
        down = loss_fn()
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|)`` over the whole (concatenated) gradient."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
):
    """Compare backprop against central differences.

    ``build_loss`` recomputes the scalar loss from the current parameter
    values. With ``max_entries`` only that many randomly chosen coordinates
    per parameter are perturbed. Returns ``(error, per_param)`` where
    ``error`` is :func:`relative_error` over all checked coordinates jointly
    and ``per_param`` maps names to ``(analytic, numeric)`` arrays.
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    backward(loss)
    analytic = {p.name or str(i): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for i, p in enumerate(params)}
    for p in params:
        p.grad = None

    def value():
        return float(build_loss().data)

    rng = rng or np.random.default_rng(0)
    per_param = {}
    all_a, all_n = [], []
    for i, p in enumerate(params):
        name = p.name or str(i)
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            idx = rng.choice(p.data.size, max_entries, replace=False)
        num = numeric_grad(value, p, eps, idx)
        ana = analytic[name]
        if idx is not None:
            num_sel, ana_sel = num.reshape(-1)[idx], ana.reshape(-1)[idx]
        else:
            num_sel, ana_sel = num.reshape(-1), ana.reshape(-1)
        per_param[name] = (ana_sel, num_sel)
        all_a.append(ana_sel)
        all_n.append(num_sel)
    return relative_error(np.concatenate(all_a), np.concatenate(all_n)), per_param
