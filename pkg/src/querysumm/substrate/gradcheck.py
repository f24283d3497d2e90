"""Central finite differences, used as the independent gradient oracle."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def _scalar(v):
    if isinstance(v, Tensor):
        v = v.data
    return float(np.asarray(v).reshape(-1)[0])


def finite_diff_grad(f, x, eps=1e-5, coords=None):
    """Approximate df/dx by (f(x + eps e_k) - f(x - eps e_k)) / (2 eps).

    `x` is a Tensor (or array); `f` takes a Tensor and returns a scalar.
    With `coords` (flat indices) only those entries are filled; others stay 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if coords is None else coords
    with no_grad():
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            fp = _scalar(f(Tensor(base.copy())))
            flat[k] = orig - eps
            fm = _scalar(f(Tensor(base.copy())))
            flat[k] = orig
            grad[k] = (fp - fm) / (2.0 * eps)
    return grad.reshape(base.shape)


def finite_diff_params(loss_fn, params, coords, eps=1e-5):
    """Finite differences of `loss_fn()` w.r.t. selected entries of named params.

    `params` maps name -> Tensor (mutated in place and restored); `coords` is a
    list of (name, flat_index). Returns one derivative per coordinate.
    """
    out = np.zeros(len(coords))
    with no_grad():
        for i, (name, k) in enumerate(coords):
            p = params[name]
            flat = p.data.reshape(-1)
            orig = flat[k]
            flat[k] = orig + eps
            fp = _scalar(loss_fn())
            flat[k] = orig - eps
            fm = _scalar(loss_fn())
            flat[k] = orig
            out[i] = (fp - fm) / (2.0 * eps)
    return out


def rel_error(analytic, numeric, floor=1e-10):
    """||a - n|| / max(||a||, ||n||, floor) over the flattened vectors."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
