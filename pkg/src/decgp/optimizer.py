"""Adam ascent over dicts of parameter arrays, with a decaying step schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["StepSchedule", "AdamState", "schedule_rate", "adam_step", "grow_state"]


@dataclass(frozen=True)
class StepSchedule:
    """Step size gamma_t = gamma0 / (1 + 0.1 sqrt(t))."""

    gamma0: float

    def __post_init__(self):
        if self.gamma0 <= 0.0:
            raise ValueError("gamma0 must be positive")


def schedule_rate(schedule: StepSchedule, t: int) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return schedule.gamma0 / (1.0 + 0.1 * math.sqrt(t))


@dataclass
class AdamState:
    """First/second moment accumulators, one entry per parameter key."""

    first_moment: dict
    second_moment: dict
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def init(cls, params: dict, beta1: float = 0.9, beta2: float = 0.999,
             epsilon: float = 1e-8) -> "AdamState":
        zeros = {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()}
        return cls(first_moment=zeros,
                   second_moment={k: v.copy() for k, v in zeros.items()},
                   beta1=beta1, beta2=beta2, epsilon=epsilon)


def grow_state(state: AdamState, params: dict) -> AdamState:
    """Zero-pad the moment accumulators when parameter arrays have grown.

    Existing moments keep their leading positions; new rows/entries start at
    zero, matching how freshly added basis points enter the model.
    """
    for key, value in params.items():
        target = np.asarray(value, dtype=float)
        for moments in (state.first_moment, state.second_moment):
            old = moments[key]
            if np.shape(old) != target.shape:
                fresh = np.zeros_like(target)
                if old.size:
                    fresh[tuple(slice(0, n) for n in old.shape)] = old
                moments[key] = fresh
    return state


def adam_step(state: AdamState, params: dict, grad: dict, rate: float):
    """One bias-corrected Adam ascent step; returns updated params, mutates state.

    Raises on non-finite gradients before touching the moment accumulators so
    a rejected step leaves the optimizer untouched.
    """
    for key, g in grad.items():
        if np.shape(np.asarray(g)) != np.shape(np.asarray(params[key])):
            raise ValueError(f"gradient shape mismatch for {key!r}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {key!r}; step rejected")

    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = {}
    for key, value in params.items():
        g = np.asarray(grad[key], dtype=float)
        m = state.first_moment[key]
        v = state.second_moment[key]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g ** 2
        state.first_moment[key] = m
        state.second_moment[key] = v
        update = rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        base = np.asarray(value, dtype=float)
        moved = base + update
        out[key] = float(moved) if np.ndim(value) == 0 else moved
    return out, state
