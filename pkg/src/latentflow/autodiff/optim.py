"""Named parameter storage and the Adam update."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericError
from .tensor import Tensor


class ParamStore:
    """Ordered name -> array map plus per-entry Adam moments.

    ``step_count`` advances once per ``adam_step`` call so bias correction
    matches a conventional per-network optimizer.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray):
        if name in self.values:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self.values[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def leaves(self, dtype=None, requires_grad=True) -> dict[str, Tensor]:
        """Fresh leaf tensors for one forward/backward pass."""
        if dtype is None:
            return {k: Tensor(v, requires_grad=requires_grad)
                    for k, v in self.values.items()}
        return {k: Tensor(v.astype(dtype), requires_grad=requires_grad)
                for k, v in self.values.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.values.values())

    def sq_norm(self) -> float:
        return float(sum(np.sum(v.astype(np.float64) ** 2) for v in self.values.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.values.items():
            out.values[k] = v.copy()
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.step_count = self.step_count
        return out

    def raw_copy(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}


def grads_from_leaves(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Collect non-None gradients after a backward pass."""
    return {k: t.grad for k, t in leaves.items() if t.grad is not None}


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One Adam update with bias correction.

    Weight decay is the coupled form: the L2 term ``weight_decay * value`` is
    added to the gradient before the moment updates (not decoupled).  Names
    missing from ``grads`` are left untouched, moments included.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if weight_decay < 0:
        raise ConfigError(f"weight decay must be non-negative, got {weight_decay}")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        if name not in store.values:
            raise ConfigError(f"gradient for unknown parameter {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
        val = store.values[name]
        g = g.astype(val.dtype, copy=False)
        if weight_decay:
            g = g + weight_decay * val
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        val -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
