"""Adam with per-parameter-group learning rates and exponential decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment buffers for one parameter group."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @staticmethod
    def for_params(params: list[np.ndarray]) -> "AdamState":
        return AdamState(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    group: str = "",
):
    """Bias-corrected in-place Adam update over one group."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state lengths disagree")
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch in group {group!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter group {group!r}")
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


@dataclass
class LrSchedule:
    """Geometric interpolation lr(k) = lr0 * (lr1/lr0)^(k/total) per group."""

    groups: dict[str, tuple[float, float, int]] = field(default_factory=dict)

    def add(self, group: str, lr_initial: float, lr_final: float | None = None, total_steps: int = 1):
        if lr_final is None:
            lr_final = lr_initial
        if lr_initial <= 0 or lr_final <= 0:
            raise ValueError("learning rates must be positive")
        self.groups[group] = (lr_initial, lr_final, max(int(total_steps), 1))

    def lr(self, group: str, step: int) -> float:
        if group not in self.groups:
            raise KeyError(f"unknown learning-rate group {group!r}")
        lr0, lr1, total = self.groups[group]
        frac = min(max(step, 0), total) / total
        return lr0 * (lr1 / lr0) ** frac


def schedule_lr(sched: LrSchedule, group: str, step: int) -> float:
    return sched.lr(group, step)
