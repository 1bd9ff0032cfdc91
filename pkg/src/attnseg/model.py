"""Attention-based encoder-decoder used to produce soft alignments.

The encoder is a stack of bidirectional LSTM layers over the input ids. The
decoder is a single LSTM driven by teacher forcing: step ``t`` attends with
the previous state ``s_{t-1}``, predicts ``w_t`` from
``s_{t-1} (+) E(w_{t-1}) (+) c_t`` through a maxout layer and a projection,
then advances its state on ``E(w_t) (+) c_t``. The model never feeds back its
own argmax.

``direction="base"`` reads source symbols and emits target words;
``direction="reverse"`` reads target words and emits source symbols.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import numerics
from .alignment import AlignmentMatrix
from .corpus import BOS, EOS, PAD
from .numerics import autodiff as ad

PRESETS = {
    "base": {"embedding_size": 12, "cell_size": 12, "encoder_layers": 2, "decoder_layers": 1},
    "reverse": {"embedding_size": 64, "cell_size": 64, "encoder_layers": 1, "decoder_layers": 1},
}


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and attention temperature.

    ``src_vocab_size`` / ``tgt_vocab_size`` are from the model's point of
    view: the encoder reads ``src``, the decoder emits ``tgt``.
    """

    direction: str
    src_vocab_size: int
    tgt_vocab_size: int
    embedding_size: int = 12
    cell_size: int = 12
    encoder_layers: int = 2
    decoder_layers: int = 1
    temperature: float = 1.0
    attention_size: int = 0  # 0 -> cell_size
    init_scale: float = 0.08
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.direction not in PRESETS:
            raise ValueError(f"direction must be 'base' or 'reverse', not {self.direction!r}")
        if self.decoder_layers != 1:
            raise ValueError("only single-layer decoders are supported")
        if self.encoder_layers < 1:
            raise ValueError("need at least one encoder layer")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def att_size(self):
        return self.attention_size or self.cell_size

    @classmethod
    def preset(cls, name, src_vocab_size, tgt_vocab_size, temperature=1.0, **overrides):
        return cls(direction=name, src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size,
                   temperature=temperature, **{**PRESETS[name], **overrides})

    @classmethod
    def for_corpus(cls, corpus, preset, temperature=1.0, **overrides):
        sv, tv = len(corpus.source_vocab), len(corpus.target_vocab)
        if preset == "reverse":
            sv, tv = tv, sv
        return cls.preset(preset, sv, tv, temperature, **overrides)

    def to_dict(self):
        return asdict(self)


def sides(pair, direction):
    """(encoder ids, decoder ids) of a sentence pair for a direction."""
    if direction == "base":
        return pair.source_symbols, pair.target_words
    return pair.target_words, pair.source_symbols


def pad_batch(seqs, pad=PAD):
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for k, s in enumerate(seqs):
        ids[k, : len(s)] = s
        mask[k, : len(s)] = 1.0
    return ids, mask


@dataclass
class Encoded:
    states: ad.Tensor  # (B, A, 2n)
    keys: ad.Tensor  # (B, A, att) = states @ W1
    mask: np.ndarray  # (B, A)
    s0: ad.Tensor  # (B, n)
    cell0: ad.Tensor  # (B, n)


class Seq2SeqModel:
    def __init__(self, config, params=None, seed=0):
        self.config = config
        self.params = self._init_params(np.random.default_rng(seed))
        if params is not None:
            self.load_params(params)

    # -- parameters --------------------------------------------------------

    def _shapes(self):
        c = self.config
        e, n, a = c.embedding_size, c.cell_size, c.att_size
        shapes = [("src_embed", (c.src_vocab_size, e)), ("tgt_embed", (c.tgt_vocab_size, e))]
        for layer in range(c.encoder_layers):
            d_in = e if layer == 0 else 2 * n
            for side in ("fw", "bw"):
                p = f"enc{layer}_{side}"
                shapes += [(f"{p}_Wx", (d_in, 4 * n)), (f"{p}_Wh", (n, 4 * n)), (f"{p}_b", (4 * n,))]
        shapes += [
            ("init_W", (2 * n, n)), ("init_b", (n,)),
            ("att_W1", (2 * n, a)), ("att_W2", (n, a)), ("att_b2", (a,)), ("att_v", (a,)),
            ("dec_We", (e, 4 * n)), ("dec_Wc", (2 * n, 4 * n)), ("dec_Wh", (n, 4 * n)), ("dec_b", (4 * n,)),
            ("maxout_Ws", (n, 2 * n)), ("maxout_We", (e, 2 * n)), ("maxout_Wc", (2 * n, 2 * n)),
            ("maxout_b", (2 * n,)),
            ("out_W", (n, c.tgt_vocab_size)), ("out_b", (c.tgt_vocab_size,)),
        ]
        return shapes

    def _init_params(self, rng):
        c = self.config
        n = c.cell_size
        params = {}
        for name, shape in self._shapes():
            if len(shape) == 1 and name != "att_v":
                data = np.zeros(shape)
                if name.endswith("_b") and shape[0] == 4 * n and (name.startswith("enc") or name == "dec_b"):
                    data[n : 2 * n] = c.forget_bias
            else:
                data = rng.uniform(-c.init_scale, c.init_scale, size=shape)
            params[name] = ad.Tensor(data, requires_grad=True, name=name)
        return params

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_params(self, arrays):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in arrays.items():
            if self.params[k].data.shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k}: {np.shape(v)} vs {self.params[k].data.shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def save(self, path):
        numerics.save_checkpoint(path, self.state_dict(), self.config.to_dict())

    @classmethod
    def load(cls, path):
        arrays, cfg = numerics.load_checkpoint(path)
        return cls(ModelConfig(**cfg), params=arrays)

    # -- forward pieces ----------------------------------------------------

    def encode(self, src_ids, mask=None):
        """Bidirectional encoding of a padded (B, A) id batch (or a single 1-D sequence)."""
        P = self.params
        c = self.config
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_ids.ndim == 1:
            src_ids = src_ids[None, :]
        if src_ids.shape[1] == 0:
            raise ValueError("cannot encode an empty sequence")
        if mask is None:
            mask = np.ones(src_ids.shape)
        if np.any(mask.sum(axis=1) == 0):
            raise ValueError("cannot encode an empty sequence")
        self._check_ids(src_ids, c.src_vocab_size, "source")
        B, A = src_ids.shape
        n = c.cell_size
        x = ad.embed(P["src_embed"], src_ids)
        finals = None
        for layer in range(c.encoder_layers):
            halves, finals = [], []
            for side, steps in (("fw", range(A)), ("bw", range(A - 1, -1, -1))):
                pre = f"enc{layer}_{side}"
                xp = ad.affine(x, P[f"{pre}_Wx"], P[f"{pre}_b"])
                h = ad.Tensor(np.zeros((B, n)))
                cell = ad.Tensor(np.zeros((B, n)))
                outs = [None] * A
                for t in steps:
                    z = ad.affine_sum([(h, P[f"{pre}_Wh"])], base=xp[:, t])
                    h, cell = ad.lstm_update(z, cell, h, mask[:, t])
                    outs[t] = h
                halves.append(ad.stack(outs, axis=1))
                finals.append(h)
            x = ad.concat(halves, axis=-1)
        s0 = ad.tanh(ad.affine(ad.concat(finals, axis=-1), P["init_W"], P["init_b"]))
        keys = ad.affine(x, P["att_W1"])
        return Encoded(x, keys, mask, s0, ad.Tensor(np.zeros((B, n))))

    def attend(self, enc, s):
        """Context vector and attention weights for decoder state ``s``."""
        P = self.params
        query = ad.affine(s, P["att_W2"], P["att_b2"])
        scores = ad.attention_scores(enc.keys, query, P["att_v"])
        alpha = ad.masked_softmax(scores, enc.mask, self.config.temperature)
        return ad.weighted_sum(alpha, enc.states), alpha

    def decoder_step(self, state, prev_ids, cur_ids, enc):
        """One teacher-forced step.

        ``state`` is ``(s_{t-1}, cell_{t-1})``; ``prev_ids`` are ``w_{t-1}``
        and ``cur_ids`` the reference ``w_t`` used to advance the state
        (pass None to skip the state update on the final step). Returns
        ``(logits, new_state, alpha)``.
        """
        P = self.params
        s, cell = state
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        self._check_ids(prev_ids, self.config.tgt_vocab_size, "target")
        ctx, alpha = self.attend(enc, s)
        zm = ad.affine_sum(
            [(s, P["maxout_Ws"]), (ad.embed(P["tgt_embed"], prev_ids), P["maxout_We"]), (ctx, P["maxout_Wc"])],
            P["maxout_b"],
        )
        logits = ad.affine(ad.maxout(zm), P["out_W"], P["out_b"])
        new_state = None
        if cur_ids is not None:
            cur_ids = np.asarray(cur_ids, dtype=np.int64)
            self._check_ids(cur_ids, self.config.tgt_vocab_size, "target")
            z = ad.affine_sum(
                [(ad.embed(P["tgt_embed"], cur_ids), P["dec_We"]), (ctx, P["dec_Wc"]), (s, P["dec_Wh"])],
                P["dec_b"],
            )
            new_state = ad.lstm_update(z, cell, s)
        return logits, new_state, alpha

    def run_batch(self, src_seqs, tgt_seqs):
        """Teacher-forced pass over a batch of (encoder ids, decoder ids) sequences.

        Returns ``(loss, per_sentence_loss, alphas)``: ``loss`` is the mean
        over sentences of the summed token losses (a differentiable scalar
        tensor), ``per_sentence_loss`` a numpy (B,) array and ``alphas`` the
        list of (B, A) attention arrays, one per decoder step. The end of
        sentence symbol is appended to every decoder sequence.
        """
        src, src_mask = pad_batch(src_seqs)
        prev, step_mask = pad_batch([(BOS,) + tuple(t) for t in tgt_seqs])
        cur, _ = pad_batch([tuple(t) + (EOS,) for t in tgt_seqs])
        B, S = cur.shape
        enc = self.encode(src, src_mask)
        state = (enc.s0, enc.cell0)
        losses, alphas = [], []
        per_sentence = np.zeros(B)
        for t in range(S):
            logits, state, alpha = self.decoder_step(state, prev[:, t], cur[:, t] if t + 1 < S else None, enc)
            loss_t, _ = ad.softmax_cross_entropy(logits, cur[:, t], step_mask[:, t])
            losses.append(loss_t)
            per_sentence += loss_t.data
            alphas.append(alpha.data)
        loss = ad.scale(ad.sum_list(losses), 1.0 / B)
        return loss, per_sentence, alphas

    def _check_ids(self, ids, size, side):
        if ids.size and (ids.min() < 0 or ids.max() >= size):
            raise ValueError(f"{side} id out of range for a vocabulary of {size}")


def force_decode(pair, model, corpus=None):
    """Loss and alignment matrix of one sentence pair under teacher forcing.

    Rows follow the decoder (one per reference token plus the end-of-sentence
    row, flagged), columns the encoder positions. With ``corpus`` the labels
    are token surfaces, otherwise ids.
    """
    losses, matrices = decode_many([pair], model, corpus)
    return losses[0], matrices[0]


def decode_many(pairs, model, corpus=None, batch_size=32):
    """:func:`force_decode` over many pairs, batched; order preserving."""
    direction = model.config.direction
    losses, matrices = [], []
    with numerics.no_grad():
        for lo in range(0, len(pairs), batch_size):
            chunk = pairs[lo : lo + batch_size]
            src = [sides(p, direction)[0] for p in chunk]
            tgt = [sides(p, direction)[1] for p in chunk]
            _, per_sentence, alphas = model.run_batch(src, tgt)
            stacked = np.stack(alphas, axis=1)  # (B, S, A)
            for k, p in enumerate(chunk):
                probs = stacked[k, : len(tgt[k]) + 1, : len(src[k])].copy()
                rows, cols = _labels(p, direction, corpus, tgt[k], src[k])
                matrices.append(AlignmentMatrix(probs, rows, cols, eos_row=True, direction=direction))
                losses.append(float(per_sentence[k]))
    return losses, matrices


def _labels(pair, direction, corpus, tgt, src):
    if corpus is None:
        return [str(i) for i in tgt] + ["</s>"], [str(i) for i in src]
    sv, tv = corpus.source_vocab, corpus.target_vocab
    if direction == "base":
        return tv.decode(tgt) + ["</s>"], sv.decode(src)
    return sv.decode(tgt) + ["</s>"], tv.decode(src)
