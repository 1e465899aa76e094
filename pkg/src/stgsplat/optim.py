"""Adam with bias correction over named parameter groups (plain numpy arrays)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )

    def ensure(self, params: dict[str, np.ndarray]) -> None:
        for k, p in params.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lrs: dict[str, float],
) -> AdamState:
    """One bias-corrected Adam update, applied to the parameter arrays in place."""
    state.ensure(params)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter {key} {p.shape}")
        m = state.m[key]
        v = state.v[key]
        if m.shape != p.shape:
            raise UsageError(f"optimizer state for {key} is stale: {m.shape} vs {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lrs[key] * m_hat / (np.sqrt(v_hat) + state.eps)
    return state
