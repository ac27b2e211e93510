"""AdamW with decoupled weight decay, constant-with-warmup LR, global-norm clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError


@dataclass
class OptimizerState:
    base_lr: float = 2e-5
    weight_decay: float = 3e-2
    epsilon: float = 1e-10
    warmup_steps: int = 100
    max_grad_norm: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def register(self, params):
        """Create zero moments for a ``{name: Tensor}`` mapping."""
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        return self


def lr_at_step(state, step):
    if step < 0:
        raise ValueError("step must be non-negative")
    if state.warmup_steps <= 0:
        return state.base_lr
    return state.base_lr * min(1.0, step / state.warmup_steps)


def _grads(params):
    items = params.values() if isinstance(params, dict) else params
    return [p.grad for p in items]


def global_grad_norm(params):
    total = 0.0
    for g in _grads(params):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return total ** 0.5


def clip_grad_norm(params, max_norm=0.05):
    """Rescale all gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the applied scale (1.0 when no clipping happened).
    """
    norm = global_grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    items = params.values() if isinstance(params, dict) else params
    for p in items:
        if p.grad is not None:
            p.grad *= p.grad.dtype.type(factor)
    return factor


def adamw_step(state, params, lr=None):
    """One AdamW update over a ``{name: Tensor}`` mapping, in place.

    The learning rate defaults to ``lr_at_step(state, state.step_count)``, so the
    very first update of a warmup schedule runs at lr 0.
    """
    if set(params) != set(state.m):
        raise KeyError("optimizer moments do not match the parameter set")
    if lr is None:
        lr = lr_at_step(state, state.step_count)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"missing gradient for {name}")
        dt = p.data.dtype.type
        m = state.m[name]
        v = state.v[name]
        m *= dt(b1)
        m += dt(1.0 - b1) * g
        v *= dt(b2)
        v += dt(1.0 - b2) * (g * g)
        m_hat = m / dt(c1)
        v_hat = v / dt(c2)
        update = m_hat / (np.sqrt(v_hat) + dt(state.epsilon)) + dt(state.weight_decay) * p.data
        new = p.data - dt(lr) * update
        if not np.all(np.isfinite(new)):
            raise NonFiniteError(f"non-finite update for {name}")
        p.data = new.astype(p.data.dtype, copy=False)
    state.step_count = t
    return params
