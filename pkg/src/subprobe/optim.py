"""Adam optimizer and the linear-warmup learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Parameter

__all__ = ["AdamState", "adam_step", "lr_schedule"]


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus a shared step
    counter. Moments are keyed by parameter name (unique within a model)."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list[Parameter], state: AdamState, lr: float) -> AdamState:
    """One Adam update with bias correction, applied in place.

    Gradients are left untouched; the caller zeroes them. Parameters with
    no gradient (or trainable=False) are skipped.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        if not p.trainable or p.grad is None:
            continue
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        upd = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= lr * upd
        if not np.isfinite(p.data).all():
            raise NonFiniteError(f"adam_step[{p.name}]")
    return state


def lr_schedule(step: int, total_steps: int, base_lr: float,
                warmup_frac: float = 0.1) -> float:
    """Linear ramp 0 -> base_lr over the first `warmup_frac` of steps, then
    constant base_lr."""
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_frac * total_steps
    if warmup <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup)
