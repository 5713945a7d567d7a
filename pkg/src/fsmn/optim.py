"""SGD with per-group learning rates, momentum and weight decay, plus the
validation-driven learning-rate schedule.

Schedule: the learning rate stays fixed while each epoch improves the best
validation perplexity by at least 1. The first epoch that fails this starts
the halving phase; six halved epochs follow (scales 1/2 .. 1/64) and then
training stops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import param_group

MAX_HALVINGS = 6
MIN_IMPROVEMENT = 1.0

CONTINUE = "continue"
CONTINUE_HALVED = "continue_halved"
STOP = "stop"


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in tensor {name!r}")
        self.name = name


@dataclass(frozen=True)
class OptimConfig:
    lr_weights: float = 0.4
    lr_taps: float = 0.002
    momentum: float = 0.0
    weight_decay: float = 0.0
    # exempt memory taps from momentum and weight decay (ablation switch)
    exempt_taps: bool = False

    def __post_init__(self):
        if not self.lr_weights > 0 or not self.lr_taps > 0:
            raise ValueError("learning rates must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not self.weight_decay >= 0.0:
            raise ValueError("weight_decay must be >= 0")

    @classmethod
    def ptb(cls) -> "OptimConfig":
        return cls(lr_weights=0.4, lr_taps=0.002, momentum=0.9, weight_decay=4e-5)


@dataclass
class ScheduleState:
    phase: str = "stable"
    best_val_ppl: float = math.inf
    halving_epochs_done: int = 0
    current_scale: float = 1.0
    stopped: bool = False


def init_velocity(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def sgd_step(params: dict, grads: dict, velocity: dict, config: OptimConfig, schedule: ScheduleState):
    """Update ``params`` and ``velocity`` in place.

    Per tensor: ``g = grad + wd * p``, ``v = mu * v + g``, ``p -= lr * v``,
    where ``lr`` is the tensor group's base rate times the schedule scale.
    All gradients are checked before anything is modified.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    for name, p in params.items():
        is_taps = param_group(name) == "taps"
        lr = (config.lr_taps if is_taps else config.lr_weights) * schedule.current_scale
        plain = is_taps and config.exempt_taps
        mu = 0.0 if plain else config.momentum
        wd = 0.0 if plain else config.weight_decay
        g = grads[name]
        if wd:
            g = g + wd * p
        v = velocity[name]
        if mu:
            v *= mu
            v += g
        else:
            v[...] = g
        p -= lr * v


def schedule_update(state: ScheduleState, val_ppl: float):
    """Advance the schedule after an epoch; returns ``(new_state, decision)``."""
    if not (math.isfinite(val_ppl) and val_ppl > 0):
        raise ValueError(f"validation perplexity must be finite and positive, got {val_ppl}")
    if state.stopped:
        return state, STOP
    if state.phase == "stable":
        if state.best_val_ppl - val_ppl >= MIN_IMPROVEMENT:
            return ScheduleState("stable", val_ppl, 0, 1.0), CONTINUE
        best = min(state.best_val_ppl, val_ppl)
        return ScheduleState("halving", best, 1, 0.5), CONTINUE_HALVED
    best = min(state.best_val_ppl, val_ppl)
    if state.halving_epochs_done >= MAX_HALVINGS:
        return ScheduleState("halving", best, state.halving_epochs_done, state.current_scale, True), STOP
    done = state.halving_epochs_done + 1
    return ScheduleState("halving", best, done, 2.0**-done), CONTINUE_HALVED
