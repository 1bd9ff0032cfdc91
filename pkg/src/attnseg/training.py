"""Optimisation loop with loss-plateau stopping, and corpus-wide alignment extraction."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, Seq2SeqModel, decode_many, sides
from .numerics import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.001
    patience: int = 3
    min_delta: float = 1e-4
    max_epochs: int = 200
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must all be >= 1")


@dataclass
class EpochStats:
    epoch: int
    loss: float  # mean over sentences of the summed token losses
    token_loss: float  # total loss / number of predicted tokens
    seconds: float = 0.0


@dataclass
class TrainResult:
    model: Seq2SeqModel
    trace: list
    best_epoch: int
    stopped_early: bool
    skipped_updates: int = 0
    losses: list = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class EarlyStopping:
    """Stop once the loss has failed to beat the best by ``delta`` for ``patience`` epochs."""

    def __init__(self, patience=3, delta=1e-4):
        self.patience = patience
        self.delta = delta
        self.best = math.inf
        self.bad_epochs = 0

    def update(self, loss):
        if loss < self.best - self.delta:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def check_vocab(corpus, model_config):
    expected = ModelConfig.for_corpus(corpus, model_config.direction)
    if (expected.src_vocab_size, expected.tgt_vocab_size) != (
        model_config.src_vocab_size, model_config.tgt_vocab_size
    ):
        raise ValueError(
            f"vocabulary mismatch: corpus gives {expected.src_vocab_size}/{expected.tgt_vocab_size}, "
            f"model expects {model_config.src_vocab_size}/{model_config.tgt_vocab_size}"
        )


def batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train(corpus, config, model_config, model=None, on_epoch=None):
    """Train on every pair of ``corpus`` and return the best-epoch model."""
    check_vocab(corpus, model_config)
    if model is None:
        model = Seq2SeqModel(model_config, seed=config.seed)
    params = model.parameters()
    opt = AdamState(lr=config.lr, clip_norm=config.clip_norm)
    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopping(config.patience, config.min_delta)
    direction = model_config.direction
    src_all = [sides(p, direction)[0] for p in corpus.pairs]
    tgt_all = [sides(p, direction)[1] for p in corpus.pairs]
    n_tokens = sum(len(t) + 1 for t in tgt_all)

    trace = []
    best_loss, best_epoch, best_state = math.inf, 0, model.state_dict()
    stopped = False
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        for idx in batches(len(corpus), config.batch_size, rng):
            for p in params:
                p.zero_grad()
            loss, per_sentence, _ = model.run_batch([src_all[i] for i in idx], [tgt_all[i] for i in idx])
            if not math.isfinite(float(loss.data)):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}", trace)
            loss.backward()
            adam_step(params, opt)
            total += float(per_sentence.sum())
        stats = EpochStats(epoch, total / len(corpus), total / n_tokens, time.perf_counter() - t0)
        trace.append(stats)
        log.info("epoch %d loss %.6f token loss %.6f (%.1fs)", epoch, stats.loss, stats.token_loss, stats.seconds)
        if on_epoch is not None:
            on_epoch(stats)
        if stats.loss < best_loss:
            best_loss, best_epoch, best_state = stats.loss, epoch, model.state_dict()
        if stopper.update(stats.loss):
            stopped = True
            break
    model.load_params(best_state)
    return TrainResult(model, trace, best_epoch, stopped, opt.skipped, [s.loss for s in trace])


def write_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in trace:
            fh.write(f"{s.epoch}\t{s.loss!r}\n")


def read_trace(path):
    with open(path, encoding="utf-8") as fh:
        return [(int(a), float(b)) for a, b in (ln.split("\t") for ln in fh.read().splitlines() if ln)]


def extract_alignments(model, corpus, batch_size=32):
    """Force-decode every pair; one matrix per pair, in corpus order."""
    check_vocab(corpus, model.config)
    _, matrices = decode_many(corpus.pairs, model, corpus, batch_size=batch_size)
    return matrices
