"""Adam with bias correction, operating in place on autodiff tensors."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    skipped: int = 0


def adam_step(params, state):
    """Apply one Adam update to ``params`` using their ``.grad``.

    Returns True if the update was applied. A non-finite gradient skips the
    whole step (logged, counted in ``state.skipped``) and leaves the step
    counter unchanged.
    """
    grads = []
    for p in params:
        if p.grad is None:
            raise ValueError(f"missing gradient for parameter {p.name or p!r}")
        grads.append(p.grad)
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        log.warning("non-finite gradient, skipping update %d", state.step + 1)
        return False
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if state.clip_norm is not None:
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
        if norm > state.clip_norm:
            grads = [g * (state.clip_norm / norm) for g in grads]

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True
