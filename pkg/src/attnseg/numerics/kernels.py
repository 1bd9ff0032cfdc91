"""Hot numeric kernels used by the fused autodiff primitives.

Every kernel exists twice: a vectorised numpy version and a loop version
compiled with ``numba.njit``. The numba path is used when numba imports and
``ATTNSEG_NUMBA`` is not set to ``0``; :func:`set_backend` switches at runtime
(the benchmark and the equivalence tests rely on that).

All kernels take and return float64 C-contiguous arrays and never modify
their inputs.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward_np(z, c_prev, h_prev, mask):
    """Pointwise LSTM update from pre-activations ``z = [i, f, o, g]``.

    ``mask`` is a (B,) 0/1 vector; rows with mask 0 carry the previous
    state through unchanged. Returns ``(h, c, act, tanh_c)``.
    """
    n = c_prev.shape[1]
    act = np.empty_like(z)
    act[:, : 3 * n] = _sigmoid(z[:, : 3 * n])
    act[:, 3 * n :] = np.tanh(z[:, 3 * n :])
    i, f, o, g = act[:, :n], act[:, n : 2 * n], act[:, 2 * n : 3 * n], act[:, 3 * n :]
    c_new = f * c_prev + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    m = mask[:, None]
    h = m * h_new + (1.0 - m) * h_prev
    c = m * c_new + (1.0 - m) * c_prev
    return h, c, act, tanh_c


def lstm_backward_np(dh, dc, act, tanh_c, c_prev, mask):
    """Returns ``(dz, dc_prev, dh_prev)`` for :func:`lstm_forward_np`."""
    n = c_prev.shape[1]
    i, f, o, g = act[:, :n], act[:, n : 2 * n], act[:, 2 * n : 3 * n], act[:, 3 * n :]
    m = mask[:, None]
    dh_new = m * dh
    dc_new = m * dc + dh_new * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(act)
    dz[:, :n] = dc_new * g * i * (1.0 - i)
    dz[:, n : 2 * n] = dc_new * c_prev * f * (1.0 - f)
    dz[:, 2 * n : 3 * n] = dh_new * tanh_c * o * (1.0 - o)
    dz[:, 3 * n :] = dc_new * i * (1.0 - g * g)
    dc_prev = dc_new * f + (1.0 - m) * dc
    dh_prev = (1.0 - m) * dh
    return dz, dc_prev, dh_prev


def attention_scores_np(keys, query, v):
    """``e[b, a] = v . tanh(keys[b, a] + query[b])``; also returns the tanh cache."""
    t = np.tanh(keys + query[:, None, :])
    return t @ v, t


def attention_scores_backward_np(de, t, v):
    dpre = de[:, :, None] * (1.0 - t * t) * v
    dv = np.einsum("ba,bak->k", de, t)
    return dpre, dpre.sum(axis=1), dv


def masked_softmax_np(e, mask, temperature):
    """Row softmax of ``e / temperature`` restricted to ``mask == 1``.

    Masked entries get probability exactly 0. Rows with no unmasked entry
    are the caller's problem (checked upstream).
    """
    s = np.where(mask > 0, e / temperature, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)
    return p


def masked_softmax_backward_np(dp, p, temperature):
    inner = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - inner) / temperature


def maxout_np(z):
    """Max over adjacent pairs ``(z[:, 2j], z[:, 2j+1])``; ties pick the first."""
    a = z[:, 0::2]
    b = z[:, 1::2]
    second = b > a
    return np.where(second, b, a), second


def maxout_backward_np(g, second):
    dz = np.zeros((g.shape[0], 2 * g.shape[1]))
    dz[:, 0::2] = np.where(second, 0.0, g)
    dz[:, 1::2] = np.where(second, g, 0.0)
    return dz


def softmax_xent_np(logits, targets, weights, floor):
    """Per-row ``-log max(p[target], floor) * weight`` with ``p = softmax(logits)``."""
    s = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)
    pt = p[np.arange(len(targets)), targets]
    loss = -np.log(np.maximum(pt, floor)) * weights
    return loss, p


def softmax_xent_backward_np(g, p, targets, weights, floor):
    rows = np.arange(len(targets))
    live = p[rows, targets] >= floor
    scale = g * weights * live
    dy = p * scale[:, None]
    dy[rows, targets] -= scale
    return dy


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


def _build_numba():
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def sig(x):
        if x >= 0.0:
            return 1.0 / (1.0 + math.exp(-x))
        ex = math.exp(x)
        return ex / (1.0 + ex)

    @njit
    def lstm_forward(z, c_prev, h_prev, mask):
        B, n = c_prev.shape
        act = np.empty_like(z)
        h = np.empty_like(h_prev)
        c = np.empty_like(c_prev)
        tanh_c = np.empty_like(c_prev)
        for b in range(B):
            m = mask[b]
            for j in range(n):
                i = sig(z[b, j])
                f = sig(z[b, n + j])
                o = sig(z[b, 2 * n + j])
                g = math.tanh(z[b, 3 * n + j])
                act[b, j] = i
                act[b, n + j] = f
                act[b, 2 * n + j] = o
                act[b, 3 * n + j] = g
                cn = f * c_prev[b, j] + i * g
                tc = math.tanh(cn)
                tanh_c[b, j] = tc
                h[b, j] = m * (o * tc) + (1.0 - m) * h_prev[b, j]
                c[b, j] = m * cn + (1.0 - m) * c_prev[b, j]
        return h, c, act, tanh_c

    @njit
    def lstm_backward(dh, dc, act, tanh_c, c_prev, mask):
        B, n = c_prev.shape
        dz = np.empty_like(act)
        dc_prev = np.empty_like(c_prev)
        dh_prev = np.empty_like(dh)
        for b in range(B):
            m = mask[b]
            for j in range(n):
                i = act[b, j]
                f = act[b, n + j]
                o = act[b, 2 * n + j]
                g = act[b, 3 * n + j]
                tc = tanh_c[b, j]
                dhn = m * dh[b, j]
                dcn = m * dc[b, j] + dhn * o * (1.0 - tc * tc)
                dz[b, j] = dcn * g * i * (1.0 - i)
                dz[b, n + j] = dcn * c_prev[b, j] * f * (1.0 - f)
                dz[b, 2 * n + j] = dhn * tc * o * (1.0 - o)
                dz[b, 3 * n + j] = dcn * i * (1.0 - g * g)
                dc_prev[b, j] = dcn * f + (1.0 - m) * dc[b, j]
                dh_prev[b, j] = (1.0 - m) * dh[b, j]
        return dz, dc_prev, dh_prev

    @njit
    def attention_scores_backward(de, t, v):
        B, A, K = t.shape
        dpre = np.empty_like(t)
        dq = np.zeros((B, K))
        dv = np.zeros(K)
        for b in range(B):
            for a in range(A):
                d = de[b, a]
                for k in range(K):
                    x = t[b, a, k]
                    val = d * (1.0 - x * x) * v[k]
                    dpre[b, a, k] = val
                    dq[b, k] += val
                    dv[k] += d * x
        return dpre, dq, dv

    @njit
    def masked_softmax(e, mask, temperature):
        B, A = e.shape
        p = np.zeros_like(e)
        for b in range(B):
            top = -np.inf
            for a in range(A):
                if mask[b, a] > 0:
                    s = e[b, a] / temperature
                    if s > top:
                        top = s
            total = 0.0
            for a in range(A):
                if mask[b, a] > 0:
                    x = math.exp(e[b, a] / temperature - top)
                    p[b, a] = x
                    total += x
            for a in range(A):
                p[b, a] /= total
        return p

    @njit
    def masked_softmax_backward(dp, p, temperature):
        B, A = p.shape
        de = np.empty_like(p)
        for b in range(B):
            inner = 0.0
            for a in range(A):
                inner += dp[b, a] * p[b, a]
            for a in range(A):
                de[b, a] = p[b, a] * (dp[b, a] - inner) / temperature
        return de

    @njit
    def maxout(z):
        B, W = z.shape
        m = W // 2
        out = np.empty((B, m))
        second = np.empty((B, m), dtype=np.bool_)
        for b in range(B):
            for j in range(m):
                x0 = z[b, 2 * j]
                x1 = z[b, 2 * j + 1]
                if x1 > x0:
                    out[b, j] = x1
                    second[b, j] = True
                else:
                    out[b, j] = x0
                    second[b, j] = False
        return out, second

    @njit
    def maxout_backward(g, second):
        B, m = g.shape
        dz = np.zeros((B, 2 * m))
        for b in range(B):
            for j in range(m):
                if second[b, j]:
                    dz[b, 2 * j + 1] = g[b, j]
                else:
                    dz[b, 2 * j] = g[b, j]
        return dz

    @njit
    def softmax_xent(logits, targets, weights, floor):
        B, V = logits.shape
        p = np.empty_like(logits)
        loss = np.empty(B)
        for b in range(B):
            top = logits[b, 0]
            for j in range(1, V):
                if logits[b, j] > top:
                    top = logits[b, j]
            total = 0.0
            for j in range(V):
                x = math.exp(logits[b, j] - top)
                p[b, j] = x
                total += x
            for j in range(V):
                p[b, j] /= total
            pt = p[b, targets[b]]
            if pt < floor:
                pt = floor
            loss[b] = -math.log(pt) * weights[b]
        return loss, p

    @njit
    def softmax_xent_backward(g, p, targets, weights, floor):
        B, V = p.shape
        dy = np.empty_like(p)
        for b in range(B):
            tgt = targets[b]
            scale = g[b] * weights[b]
            if p[b, tgt] < floor:
                scale = 0.0
            for j in range(V):
                dy[b, j] = p[b, j] * scale
            dy[b, tgt] -= scale
        return dy

    return {
        "lstm_forward": lstm_forward,
        "lstm_backward": lstm_backward,
        # the forward pass is one big tanh: numpy's vectorised tanh beats a compiled scalar loop
        "attention_scores": attention_scores_np,
        "attention_scores_backward": attention_scores_backward,
        "masked_softmax": masked_softmax,
        "masked_softmax_backward": masked_softmax_backward,
        "maxout": maxout,
        "maxout_backward": maxout_backward,
        "softmax_xent": softmax_xent,
        "softmax_xent_backward": softmax_xent_backward,
    }


_NUMPY = {
    "lstm_forward": lstm_forward_np,
    "lstm_backward": lstm_backward_np,
    "attention_scores": attention_scores_np,
    "attention_scores_backward": attention_scores_backward_np,
    "masked_softmax": masked_softmax_np,
    "masked_softmax_backward": masked_softmax_backward_np,
    "maxout": maxout_np,
    "maxout_backward": maxout_backward_np,
    "softmax_xent": softmax_xent_np,
    "softmax_xent_backward": softmax_xent_backward_np,
}

_NUMBA = None
_active = _NUMPY


def numba_available():
    return numba is not None


def backend():
    """Name of the active kernel set: ``"numba"`` or ``"numpy"``."""
    return "numba" if _active is not _NUMPY else "numpy"


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels for all later calls."""
    global _NUMBA, _active
    if name == "numpy":
        _active = _NUMPY
    elif name == "numba":
        if numba is None:
            raise RuntimeError("numba is not installed")
        if _NUMBA is None:
            _NUMBA = _build_numba()
        _active = _NUMBA
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


def get(name):
    return _active[name]


if numba is not None and os.environ.get("ATTNSEG_NUMBA", "1") != "0":
    set_backend("numba")
