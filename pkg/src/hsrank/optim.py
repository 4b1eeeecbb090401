"""Optimizers and learning-rate schedules for the training loop.

Steps operate in place on a ``name -> array`` view of the parameters.
A step with any non-finite gradient is aborted wholesale (no tensor is
touched, state is unchanged) and reported to the caller via the return
value so the training log can flag it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractViolation

SGD = "sgd"
ADAMW = "adamw"
OPTIMIZERS = (SGD, ADAMW)

CONSTANT = "constant"
COSINE_DECAY = "cosine"
SCHEDULES = (CONSTANT, COSINE_DECAY)

ADAM_EPS = 1e-8


@dataclass
class SgdState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class AdamWState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0


def _finite(grads: Mapping[str, np.ndarray]) -> bool:
    return all(np.isfinite(g).all() for g in grads.values())


def sgd_step(
    tensors: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    state: SgdState | None = None,
) -> bool:
    """v <- momentum*v + g + wd*p;  p <- p - lr*v  (classic L2 decay).

    Returns False (and does nothing) when a gradient is non-finite.
    """
    if momentum != 0.0 and state is None:
        raise ContractViolation("momentum > 0 requires an SgdState")
    if not _finite(grads):
        return False
    for name, p in tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        update = g + weight_decay * p if weight_decay else g
        if momentum != 0.0:
            v = state.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
            v = momentum * v + update
            state.velocity[name] = v
            update = v
        p -= lr * update
    return True


def adamw_step(
    tensors: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.0,
    state: AdamWState | None = None,
) -> bool:
    """Bias-corrected moments with decoupled weight decay."""
    if state is None:
        raise ContractViolation("adamw_step requires an AdamWState")
    if not _finite(grads):
        return False
    beta1, beta2 = betas
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, p in tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        p -= lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + weight_decay * p)
    return True


def lr_at(schedule: str, base_lr: float, step: int, total_steps: int) -> float:
    """Learning rate at ``step`` of ``total_steps`` (0-based, inclusive)."""
    if total_steps == 0:
        return base_lr  # degenerate run: constant fallback
    if not 0 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside [0, {total_steps}]")
    if schedule == CONSTANT:
        return base_lr
    if schedule == COSINE_DECAY:
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
    raise ContractViolation(f"unknown schedule {schedule!r}")
