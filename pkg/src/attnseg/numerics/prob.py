"""Plain-array probability helpers: temperature softmax and the sequence loss."""

import numpy as np

from .autodiff import PROB_FLOOR


def softmax_temperature(logits, temperature=1.0):
    """``exp(l_i / T) / sum_j exp(l_j / T)``, stabilised by max subtraction."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    s = x / temperature
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    return p / p.sum(axis=-1, keepdims=True)


def sequence_loss(step_probabilities, references, floor=PROB_FLOOR):
    """Negative log-likelihood of one reference sequence.

    ``step_probabilities[t]`` is the output distribution at step ``t``;
    the loss is ``-sum_t log p_t[w_t]`` with ``p`` clamped below at ``floor``.
    """
    total = 0.0
    for p, w in zip(step_probabilities, references, strict=True):
        total -= np.log(max(float(p[w]), floor))
    return total


def cross_entropy(batch_probabilities, batch_references, floor=PROB_FLOOR):
    """Mean over sentences of :func:`sequence_loss`."""
    if not batch_probabilities:
        raise ValueError("empty batch")
    losses = [
        sequence_loss(p, w, floor)
        for p, w in zip(batch_probabilities, batch_references, strict=True)
    ]
    return sum(losses) / len(losses)
