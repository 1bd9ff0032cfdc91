"""Finite-difference verification of reverse-mode gradients."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    tolerance: float
    failures: list = field(default_factory=list)  # (param name, flat index, analytic, numeric, rel)
    floor: float = 0.0
    below_floor: int = 0  # coordinates compared on the absolute scale

    @property
    def ok(self):
        return not self.failures


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(loss_fn, params, tolerance=1e-4, samples=None, h=1e-5, seed=0,
                   analytic=None, floor=1e-6):
    """Compare reverse-mode gradients against central differences.

    The relative error uses ``max(|a|, |n|, floor)`` as denominator. The
    floor is raised to the smallest gradient the difference quotient can
    resolve to ``tolerance``: a loss of size ``L`` carries roundoff near
    ``eps * L``, so the quotient is noisy at ``eps * L / h`` and the floor
    becomes ``eps * L / (h * tolerance)`` when that is larger.

    ``loss_fn()`` must rebuild the graph from the current parameter values
    and return a scalar tensor. ``samples`` coordinates are drawn uniformly
    over all parameters (all of them when None). ``analytic`` may supply
    precomputed gradients keyed by parameter position (used for fault
    injection in tests).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if analytic is None:
        loss.backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    noise = np.finfo(np.float64).eps * abs(float(loss.data)) / h
    floor = max(floor, noise / tolerance)

    coords = [(k, j) for k, p in enumerate(params) for j in range(p.data.size)]
    if samples is not None and samples < len(coords):
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    failures = []
    below = 0
    for k, j in coords:
        flat = params[k].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = float(loss_fn().data)
        flat[j] = orig - h
        down = float(loss_fn().data)
        flat[j] = orig
        numeric = (up - down) / (2 * h)
        a = float(analytic[k].reshape(-1)[j])
        rel = relative_error(a, numeric, floor)
        below += max(abs(a), abs(numeric)) < floor
        worst = max(worst, rel)
        if rel >= tolerance:
            failures.append((params[k].name, j, a, numeric, rel))
    return GradCheckReport(worst, len(coords), tolerance, failures, floor, below)
