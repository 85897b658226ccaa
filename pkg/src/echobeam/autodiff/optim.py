"""Adam and momentum-with-decay updates operating in place on numpy arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from echobeam.errors import NumericalError


@dataclass
class OptimizerState:
    kind: str                     # "ADAM" or "MOMENTUM_DECAY"
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    n_half: float = 1000.0
    step: int = 0
    slots: list = field(default_factory=list)   # Adam: [m..., v...]; momentum: [buf...]

    @classmethod
    def adam(cls, params, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        slots = [np.zeros_like(p) for p in params] + [np.zeros_like(p) for p in params]
        return cls("ADAM", lr, beta1, beta2, eps, slots=slots)

    @classmethod
    def momentum_decay(cls, params, lr=0.005, momentum=0.9, n_half=1000.0) -> "OptimizerState":
        return cls("MOMENTUM_DECAY", lr, momentum=momentum, n_half=n_half,
                   slots=[np.zeros_like(p) for p in params])

    def learning_rate(self, iteration: int) -> float:
        if self.kind == "MOMENTUM_DECAY":
            return self.lr / (1.0 + iteration / self.n_half)
        return self.lr


def _check(grads, iteration):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at iteration {iteration}")


def adam_step(state: OptimizerState, params, grads, iteration: int | None = None):
    """Bias-corrected Adam; updates ``params`` in place and returns them."""
    _check(grads, state.step if iteration is None else iteration)
    n = len(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.slots[:n], state.slots[n:]):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params


def momentum_decay_step(state: OptimizerState, params, grads, iteration: int):
    """Heavy-ball momentum with learning rate ``lr / (1 + iteration / n_half)``."""
    _check(grads, iteration)
    state.step += 1
    lr = state.learning_rate(iteration)
    for p, g, buf in zip(params, grads, state.slots):
        buf *= state.momentum
        buf += g
        p -= (lr * buf).astype(p.dtype, copy=False)
    return params
