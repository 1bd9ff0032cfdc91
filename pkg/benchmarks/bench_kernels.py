"""Time every kernel under the numpy and numba backends, then one training batch.

    python benchmarks/bench_kernels.py [--repeat 200] [--batch 32] [--cell 64]

Shapes default to the reverse preset on a 32-sentence batch. Results differ
by machine; the ratio column is what matters.
"""

import argparse
import time

import numpy as np

from attnseg.model import ModelConfig, Seq2SeqModel
from attnseg.numerics import kernels


def best_of(fn, repeat):
    fn()  # warm up (and compile)
    times = []
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        times.append((time.perf_counter() - t0) / repeat)
    return min(times)


def cases(B, A, n, V, rng):
    z = rng.normal(size=(B, 4 * n))
    c = rng.normal(size=(B, n))
    h = rng.normal(size=(B, n))
    mask = (rng.random(B) < 0.9).astype(float)
    keys = rng.normal(size=(B, A, n))
    q = rng.normal(size=(B, n))
    v = rng.normal(size=n)
    e = rng.normal(size=(B, A))
    emask = np.ones((B, A))
    emask[:, A // 2 :] = rng.random((B, A - A // 2)) < 0.5
    zm = rng.normal(size=(B, 2 * n))
    logits = rng.normal(size=(B, V))
    targets = rng.integers(0, V, B)
    weights = np.ones(B)

    def lstm(k):
        fwd, bwd = k.get("lstm_forward"), k.get("lstm_backward")

        def run():
            _, _, act, tc = fwd(z, c, h, mask)
            bwd(h, c, act, tc, c, mask)
        return run

    def attention(k):
        fwd, bwd = k.get("attention_scores"), k.get("attention_scores_backward")

        def run():
            out, t = fwd(keys, q, v)
            bwd(out, t, v)
        return run

    def softmax(k):
        fwd, bwd = k.get("masked_softmax"), k.get("masked_softmax_backward")

        def run():
            p = fwd(e, emask, 10.0)
            bwd(p, p, 10.0)
        return run

    def maxout(k):
        fwd, bwd = k.get("maxout"), k.get("maxout_backward")

        def run():
            out, second = fwd(zm)
            bwd(out, second)
        return run

    def xent(k):
        fwd, bwd = k.get("softmax_xent"), k.get("softmax_xent_backward")

        def run():
            loss, p = fwd(logits, targets, weights, 1e-12)
            bwd(loss, p, targets, weights, 1e-12)
        return run

    return {"lstm": lstm, "attention": attention, "masked_softmax": softmax, "maxout": maxout,
            "softmax_xent": xent}


def training_batch(B, A, n, rng):
    cfg = ModelConfig.preset("reverse", 40, 60, temperature=10.0, embedding_size=n, cell_size=n)
    model = Seq2SeqModel(cfg, seed=0)
    src = [tuple(rng.integers(4, 40, rng.integers(3, 9))) for _ in range(B)]
    tgt = [tuple(rng.integers(4, 60, rng.integers(A // 2, A))) for _ in range(B)]

    def run():
        for p in model.parameters():
            p.zero_grad()
        loss, _, _ = model.run_batch(src, tgt)
        loss.backward()
    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--length", type=int, default=24, help="encoder length for the kernels")
    ap.add_argument("--cell", type=int, default=64)
    ap.add_argument("--vocab", type=int, default=60)
    args = ap.parse_args()

    if not kernels.numba_available():
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    table = cases(args.batch, args.length, args.cell, args.vocab, rng)
    previous = kernels.backend()
    print(f"{'kernel':<16}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    try:
        for name, make in table.items():
            t = {}
            for b in ("numpy", "numba"):
                kernels.set_backend(b)
                t[b] = best_of(make(kernels), args.repeat)
            print(f"{name:<16}{1e6 * t['numpy']:>12.1f}{1e6 * t['numba']:>12.1f}{t['numpy'] / t['numba']:>10.2f}")
        t = {}
        for b in ("numpy", "numba"):
            kernels.set_backend(b)
            t[b] = best_of(training_batch(args.batch, args.length, args.cell, np.random.default_rng(1)), 3)
        print(f"{'train batch':<16}{1e3 * t['numpy']:>10.1f}ms{1e3 * t['numba']:>10.1f}ms"
              f"{t['numpy'] / t['numba']:>10.2f}")
    finally:
        kernels.set_backend(previous)


if __name__ == "__main__":
    main()
