"""Named parameter storage with freezing, and Adam."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


class MissingGradientError(RuntimeError):
    pass


class ParamStore:
    def __init__(self):
        self._params = {}
        self._frozen = set()

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def is_frozen(self, name):
        return name in self._frozen

    def freeze(self, names=None, prefix=None):
        for n in self._select(names, prefix):
            self._frozen.add(n)
            self._params[n].requires_grad = False
            self._params[n].grad = None

    def unfreeze(self, names=None, prefix=None):
        for n in self._select(names, prefix):
            self._frozen.discard(n)
            self._params[n].requires_grad = True

    def _select(self, names, prefix):
        if names is None and prefix is None:
            return list(self._params)
        out = list(names or [])
        if prefix is not None:
            prefixes = (prefix,) if isinstance(prefix, str) else tuple(prefix)
            out += [n for n in self._params if n.startswith(prefixes)]
        return out

    def trainable(self):
        return [n for n in self._params if n not in self._frozen]

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def grad_norm(self):
        total = 0.0
        for n in self.trainable():
            g = self._params[n].grad
            if g is not None:
                total += float((g * g).sum())
        return total ** 0.5

    def clip_grad_norm(self, max_norm):
        norm = self.grad_norm()
        if max_norm and norm > max_norm:
            c = max_norm / norm
            for n in self.trainable():
                p = self._params[n]
                if p.grad is not None:
                    p.grad = p.grad * c
        return norm

    def checksum(self, names=None, prefix=None):
        h = hashlib.sha256()
        for n in sorted(self._select(names, prefix)):
            h.update(n.encode())
            h.update(np.ascontiguousarray(self._params[n].data).tobytes())
        return h.hexdigest()

    def state_dict(self):
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for n, arr in state.items():
            if n not in self._params:
                raise KeyError(f"unexpected parameter {n!r}")
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self._params[n].shape:
                raise ShapeError(f"{n}: checkpoint shape {arr.shape} != model shape {self._params[n].shape}")
            self._params[n].data = arr.copy()

    def copy_from(self, other, names=None):
        for n in names or self.names():
            self._params[n].data = other[n].data.copy()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, state):
    """One bias-corrected Adam update of every unfrozen parameter; clears grads."""
    for name in store.trainable():
        if store[name].grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in store.items():
        if store.is_frozen(name):
            p.grad = None
            continue
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
    return store
