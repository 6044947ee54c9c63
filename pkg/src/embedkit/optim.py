"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError


@dataclass(frozen=True)
class Schedule:
    peak_lr: float
    total_steps: int
    warmup_frac: float = 0.10

    @property
    def warmup_steps(self):
        return int(round(self.warmup_frac * self.total_steps))

    def __call__(self, step):
        return lr_at(self, step)


def lr_at(schedule, step):
    """Linear ramp 0 -> peak over the warmup steps, then cosine decay to 0."""
    total = schedule.total_steps
    if total <= 0:
        raise ParameterError("total_steps must be positive")
    if step < 0:
        raise ParameterError("step must be non-negative")
    step = min(step, total)
    warm = schedule.warmup_steps
    if step < warm:
        return schedule.peak_lr * step / warm
    if total == warm:
        return schedule.peak_lr
    progress = (step - warm) / (total - warm)
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(params, max_norm=1.0):
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads))
    if total > max_norm:
        scale = np.float32(max_norm / (total + 1e-6))
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class AdamW:
    """Adam with bias correction; weight decay is applied as ``p -= lr * wd * p``.

    Parameters listed in ``no_decay`` (typically biases and layer-norm gains)
    are updated without the decay term.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01,
                 clip_norm=None, no_decay=()):
        self.params = list(params)
        self.lr = lr
        self.clip_norm = clip_norm
        skip = set(id(p) for p in no_decay)
        self._decayed = [id(p) not in skip for p in self.params]
        self.state = AdamWState.for_params(
            [p.data for p in self.params], betas=tuple(betas), eps=eps, weight_decay=weight_decay
        )

    @property
    def step_count(self):
        return self.state.step_count

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        if self.clip_norm is not None:
            clip_grad_norm(self.params, self.clip_norm)
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adamw_step([p.data for p in self.params], grads, self.state, lr, decay_mask=self._decayed)


def adamw_update(theta, grad, m, v, lr, b1, b2, c1, c2, eps, wd):
    """In-place AdamW update of ``theta`` and its moment buffers."""
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    if wd:
        theta *= 1.0 - lr * wd
    theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def adamw_step(params, grads, state, lr, decay_mask=None):
    """Functional form: update ``params`` (list of arrays) in place given ``grads``.

    ``state`` is an :class:`AdamWState`; it is mutated and also returned.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state must have equal length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch between param {p.shape}, grad {g.shape}, state {m.shape}")
    if lr < 0:
        raise ParameterError("learning rate must be non-negative")
    state.step_count += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step_count
    c2 = 1.0 - b2 ** state.step_count
    if decay_mask is None:
        decay_mask = [True] * len(params)
    for p, g, m, v, decay in zip(params, grads, state.m, state.v, decay_mask):
        wd = state.weight_decay if decay else 0.0
        adamw_update(p, np.asarray(g, dtype=p.dtype), m, v, lr, b1, b2, c1, c2, state.eps, wd)
    return state


@dataclass
class AdamWState:
    m: list
    v: list
    step_count: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)
