import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from attnseg.numerics import (
    AdamState,
    Tensor,
    adam_step,
    cross_entropy,
    gradient_check,
    kernels,
    load_checkpoint,
    save_checkpoint,
    sequence_loss,
    softmax_temperature,
)
from attnseg.numerics import autodiff as ad


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestSoftmaxTemperature:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_temperature([0.0, 0.0, 0.0], 1.0), [1 / 3] * 3, atol=1e-15)

    def test_exact_exponentials(self):
        np.testing.assert_allclose(softmax_temperature([math.log(2), 0.0], 1.0), [2 / 3, 1 / 3], atol=1e-15)

    def test_temperature_two(self):
        # exp(ln(16) / 2) = 4
        np.testing.assert_allclose(softmax_temperature([math.log(16), 0.0], 2.0), [0.8, 0.2], atol=1e-15)

    @pytest.mark.parametrize("t", [0.0, -1.0])
    def test_bad_temperature(self, t):
        with pytest.raises(ValueError):
            softmax_temperature([1.0, 2.0], t)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            softmax_temperature([1.0, np.inf], 1.0)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-700, 700)),
           st.floats(0.05, 50))
    def test_is_distribution(self, x, t):
        p = softmax_temperature(x, t)
        assert np.all(p >= 0) and np.all(p <= 1)
        assert abs(p.sum() - 1.0) < 1e-12


class TestCrossEntropy:
    def test_certain_prediction(self):
        probs = [np.eye(4)[w] for w in (1, 3, 2)]
        assert sequence_loss(probs, [1, 3, 2]) == 0.0

    def test_uniform(self):
        probs = [np.full(4, 0.25)] * 2
        assert sequence_loss(probs, [0, 3]) == pytest.approx(2 * math.log(4), abs=1e-15)

    def test_batch_mean(self):
        p1 = [np.array([0.5, 0.5])]
        p2 = [np.array([0.25, 0.75]), np.array([0.9, 0.1])]
        l1 = sequence_loss(p1, [0])
        l2 = sequence_loss(p2, [1, 0])
        assert cross_entropy([p1, p2], [[0], [1, 0]]) == pytest.approx((l1 + l2) / 2, abs=1e-15)

    def test_floor(self):
        assert sequence_loss([np.array([1.0, 0.0])], [1]) == pytest.approx(-math.log(1e-12))

    def test_fused_matches_plain(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(4, 6))
        targets = np.array([0, 5, 2, 2])
        loss, probs = ad.softmax_cross_entropy(Tensor(logits), targets)
        for b in range(4):
            expected = sequence_loss([softmax_temperature(logits[b])], [targets[b]])
            assert loss.data[b] == pytest.approx(expected, abs=1e-12)
            np.testing.assert_allclose(probs[b], softmax_temperature(logits[b]), atol=1e-15)


def scalar_lstm(x, h, c, W, U, b):
    """Element-by-element reference for one LSTM step (gate order i, f, o, g)."""
    n = len(h)
    z = [sum(x[k] * W[k][j] for k in range(len(x))) + sum(h[k] * U[k][j] for k in range(n)) + b[j]
         for j in range(4 * n)]
    h_new, c_new = [], []
    for j in range(n):
        i = sigmoid(z[j])
        f = sigmoid(z[n + j])
        o = sigmoid(z[2 * n + j])
        g = math.tanh(z[3 * n + j])
        cj = f * c[j] + i * g
        c_new.append(cj)
        h_new.append(o * math.tanh(cj))
    return h_new, c_new


class TestLSTMCell:
    def _run(self, x, h, c, W, U, b):
        hh, cc = ad.lstm_cell(Tensor(x[None]), Tensor(h[None]), Tensor(c[None]), Tensor(W), Tensor(U), Tensor(b))
        return hh.data[0], cc.data[0]

    def test_zero_weights(self):
        n = 3
        h, c = self._run(np.zeros(2), np.zeros(n), np.zeros(n), np.zeros((2, 4 * n)), np.zeros((n, 4 * n)),
                         np.zeros(4 * n))
        assert np.all(h == 0) and np.all(c == 0)

    def test_forget_bias_keeps_cell(self):
        n = 3
        b = np.zeros(4 * n)
        b[n : 2 * n] = 10.0
        cell = np.array([0.7, -1.3, 2.0])
        _, c = self._run(np.ones(2), np.zeros(n), cell, np.zeros((2, 4 * n)), np.zeros((n, 4 * n)), b)
        np.testing.assert_allclose(c, cell, atol=1e-4)

    @pytest.mark.parametrize("backend", ["numpy", "numba"])
    def test_matches_scalar_oracle(self, backend):
        prev = kernels.backend()
        kernels.set_backend(backend)
        try:
            rng = np.random.default_rng(11)
            n, d = 3, 4
            x, h, c = rng.normal(size=d), rng.normal(size=n), rng.normal(size=n)
            W, U, b = rng.normal(size=(d, 4 * n)), rng.normal(size=(n, 4 * n)), rng.normal(size=4 * n)
            hh, cc = self._run(x, h, c, W, U, b)
            eh, ec = scalar_lstm(x, h, c, W.tolist(), U.tolist(), b)
            np.testing.assert_allclose(hh, eh, atol=1e-12)
            np.testing.assert_allclose(cc, ec, atol=1e-12)
        finally:
            kernels.set_backend(prev)

    def test_mask_carries_state(self):
        rng = np.random.default_rng(0)
        z, c, h = rng.normal(size=(2, 8)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        hh, cc = ad.lstm_update(Tensor(z), Tensor(c), Tensor(h), mask=np.array([1.0, 0.0]))
        np.testing.assert_array_equal(hh.data[1], h[1])
        np.testing.assert_array_equal(cc.data[1], c[1])
        assert not np.allclose(hh.data[0], h[0])


class TestAdam:
    def test_zero_gradient(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        st_ = AdamState()
        for _ in range(3):
            adam_step([p], st_)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert st_.step == 3

    def test_first_step(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        p.grad = np.array(0.5)
        adam_step([p], AdamState(lr=0.001))
        assert float(p.data) == pytest.approx(1.0 - 0.001 * 0.5 / (0.5 + 1e-8), abs=1e-15)

    def test_matches_scalar_oracle(self):
        lr, b1, b2, eps, g = 0.001, 0.9, 0.999, 1e-8, 0.3
        x, m, v = 2.0, 0.0, 0.0
        for t in range(1, 4):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        p = Tensor(np.array(2.0), requires_grad=True)
        state = AdamState()
        for _ in range(3):
            p.grad = np.array(g)
            adam_step([p], state)
        assert abs(float(p.data) - x) < 1e-12

    def test_missing_gradient(self):
        with pytest.raises(ValueError):
            adam_step([Tensor(np.zeros(2), requires_grad=True)], AdamState())

    def test_non_finite_skipped(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([np.nan])
        state = AdamState()
        assert adam_step([p], state) is False
        assert state.skipped == 1 and state.step == 0
        assert p.data[0] == 1.0

    def test_clipping(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([3.0, 4.0])
        state = AdamState(clip_norm=1.0)
        adam_step([p], state)
        np.testing.assert_allclose(state.m[0], 0.1 * np.array([0.6, 0.8]))


class TestGradientCheck:
    def test_quadratic_exact(self):
        x = Tensor(np.array(3.0), requires_grad=True, name="x")
        report = gradient_check(lambda: x * x, [x])
        assert x.grad is not None and float(x.grad) == 6.0
        assert report.ok and report.max_rel_error < 1e-9

    def test_fault_injection(self):
        w = Tensor(np.array([0.3, -0.2, 0.5]), requires_grad=True, name="w")

        def f():
            return ad.total(ad.tanh(w * w))

        w.zero_grad()
        f().backward()
        bad = w.grad.copy()
        bad[1] += 1e-3
        report = gradient_check(f, [w], analytic=[bad])
        assert not report.ok
        assert [fail[1] for fail in report.failures] == [1]


def _primitive_cases():
    rng = np.random.default_rng(5)
    B, A, K, n = 3, 4, 5, 2
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0], [1, 0, 0, 0]], dtype=float)
    t = lambda *s: Tensor(rng.normal(size=s), requires_grad=True)  # noqa: E731
    w = Tensor(rng.normal(size=(B, 6)))
    cases = {}
    keys, query, v = t(B, A, K), t(B, K), t(K)
    cases["attention_scores"] = (lambda: ad.total(ad.attention_scores(keys, query, v) * t0), [keys, query, v])
    t0 = Tensor(rng.normal(size=(B, A)))
    e = t(B, A)
    cases["masked_softmax"] = (lambda: ad.total(ad.masked_softmax(e, mask, 3.0) * t0), [e])
    z, c, h = t(B, 4 * n), t(B, n), t(B, n)
    r1, r2 = Tensor(rng.normal(size=(B, n))), Tensor(rng.normal(size=(B, n)))

    def lstm():
        hh, cc = ad.lstm_update(z, c, h, mask[:, 1])
        return ad.total(hh * r1) + ad.total(cc * r2)

    cases["lstm_update"] = (lstm, [z, c, h])
    zm, r3 = t(B, 6), Tensor(rng.normal(size=(B, 3)))
    cases["maxout"] = (lambda: ad.total(ad.maxout(zm) * r3), [zm])
    lg = t(B, 6)
    cases["softmax_cross_entropy"] = (
        lambda: ad.total(ad.softmax_cross_entropy(lg, [0, 3, 5], [1.0, 0.5, 0.0])[0]), [lg])
    al, st_, r4 = t(B, A), t(B, A, K), Tensor(rng.normal(size=(B, K)))
    cases["weighted_sum"] = (lambda: ad.total(ad.weighted_sum(al, st_) * r4), [al, st_])
    x, W, b = t(B, A, K), t(K, 3), t(3)
    cases["affine"] = (lambda: ad.total(ad.tanh(ad.affine(x, W, b))), [x, W, b])
    x1, x2, W1, W2, base = t(B, 2), t(B, 3), t(2, 4), t(3, 4), t(B, 4)
    cases["affine_sum"] = (lambda: ad.total(ad.sigmoid(ad.affine_sum([(x1, W1), (x2, W2)], None, base))),
                           [x1, x2, W1, W2, base])
    table = t(7, 3)
    ids = np.array([[1, 2, 2], [6, 1, 0]])
    cases["embed"] = (lambda: ad.total(ad.tanh(ad.embed(table, ids))), [table])
    a1, a2 = t(B, 2), t(B, 3)
    cases["concat_stack_index"] = (
        lambda: ad.total(ad.exp(ad.stack([ad.concat([a1, a2])[:, 1:4], a2], axis=1))), [a1, a2])
    p = Tensor(rng.uniform(0.5, 2.0, size=(3,)), requires_grad=True)
    cases["log_mul_sub"] = (lambda: ad.total(ad.log(p) * p - p + 2.0 * p), [p])
    return cases


@pytest.mark.parametrize("backend", ["numpy", "numba"])
@pytest.mark.parametrize("name", sorted(_primitive_cases()))
def test_primitive_gradients(name, backend):
    prev = kernels.backend()
    kernels.set_backend(backend)
    try:
        fn, params = _primitive_cases()[name]
        report = gradient_check(fn, params, tolerance=1e-4)
        assert report.ok, report.failures
    finally:
        kernels.set_backend(prev)


@pytest.mark.parametrize("kernel,args", [
    ("masked_softmax", lambda r: (r.normal(size=(4, 5)), (r.random((4, 5)) > 0.3).astype(float) + np.eye(4, 5), 2.5)),
    ("attention_scores", lambda r: (r.normal(size=(3, 4, 5)), r.normal(size=(3, 5)), r.normal(size=5))),
    ("maxout", lambda r: (r.normal(size=(3, 8)),)),
    ("softmax_xent", lambda r: (r.normal(size=(3, 6)), np.array([1, 0, 5]), np.array([1.0, 0.0, 2.0]), 1e-12)),
    ("lstm_forward", lambda r: (r.normal(size=(3, 8)), r.normal(size=(3, 2)), r.normal(size=(3, 2)),
                                np.array([1.0, 0.0, 1.0]))),
])
def test_backends_agree(kernel, args):
    a = args(np.random.default_rng(1))
    kernels.set_backend("numpy")
    expected = kernels.get(kernel)(*a)
    kernels.set_backend("numba")
    got = kernels.get(kernel)(*a)
    for x, y in zip(np.atleast_1d(expected) if not isinstance(expected, tuple) else expected,
                    np.atleast_1d(got) if not isinstance(got, tuple) else got):
        np.testing.assert_allclose(np.asarray(y, dtype=float), np.asarray(x, dtype=float), rtol=1e-12, atol=1e-14)


def test_masked_softmax_zero_on_padding():
    p = ad.masked_softmax(Tensor(np.array([[1.0, 5.0, 2.0]])), np.array([[1, 0, 1]]))
    assert p.data[0, 1] == 0.0
    assert abs(p.data.sum() - 1) < 1e-12


def test_masked_softmax_all_masked():
    with pytest.raises(ValueError):
        ad.masked_softmax(Tensor(np.zeros((1, 2))), np.zeros((1, 2)))


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = ad.tanh(w)
    assert not y.requires_grad and y._parents == ()


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    params = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=4)}
    path = tmp_path / "ck.npz"
    save_checkpoint(path, params, {"direction": "base", "n": 3})
    back, cfg = load_checkpoint(path)
    assert cfg == {"direction": "base", "n": 3}
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])
