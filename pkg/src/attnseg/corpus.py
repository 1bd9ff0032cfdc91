"""Parallel corpora of unsegmented source text and word-tokenised translations.

Source lines are turned into symbol sequences (one NFC codepoint per symbol
unless a grapheme inventory says otherwise); target lines are whitespace
tokenised. An optional gold file carries the reference segmentation of the
source side.
"""

import json
import random
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")


class CorpusError(ValueError):
    pass


class Vocabulary:
    """Bijective token <-> id map with four reserved ids at the front."""

    def __init__(self, tokens=()):
        self.itos = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token):
        return self.stoi.get(token, UNK)

    def encode(self, tokens):
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    @property
    def tokens(self):
        """Non-reserved tokens in id order."""
        return self.itos[len(RESERVED):]

    @classmethod
    def from_counts(cls, counts):
        # frequency descending, ties lexicographic
        return cls(sorted(counts, key=lambda t: (-counts[t], t)))

    def to_list(self):
        return list(self.tokens)


@dataclass(frozen=True)
class SentencePair:
    source_symbols: tuple
    target_words: tuple
    gold_tokens: tuple | None = None

    def __post_init__(self):
        if not self.source_symbols:
            raise CorpusError("empty source sequence")
        if not self.target_words:
            raise CorpusError("empty target sequence")


@dataclass
class Corpus:
    """Sentence pairs plus vocabularies.

    ``compounds`` maps a source id that stands for several symbols (added by
    :func:`inject_supervision`) to the ids of those symbols; gold spans are
    always expressed over the atomic symbol positions.
    """

    pairs: list
    source_vocab: Vocabulary
    target_vocab: Vocabulary
    meta: dict = field(default_factory=dict)
    compounds: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def symbol_ids(self, pair):
        """Atomic symbol ids of a pair's source side."""
        out = []
        for i in pair.source_symbols:
            out.extend(self.compounds.get(i, (i,)))
        return out

    def token_lengths(self, pair):
        """Number of atomic symbols covered by each source token."""
        return [len(self.compounds.get(i, (i,))) for i in pair.source_symbols]

    def source_surface(self, pair):
        return self.source_vocab.decode(pair.source_symbols)

    def symbol_surface(self, pair):
        return self.source_vocab.decode(self.symbol_ids(pair))

    def target_surface(self, pair):
        return self.target_vocab.decode(pair.target_words)

    def gold_words(self, pair):
        if pair.gold_tokens is None:
            raise CorpusError("pair has no gold segmentation")
        syms = self.symbol_surface(pair)
        return ["".join(syms[s:e]) for s, e in pair.gold_tokens]

    @property
    def has_gold(self):
        return bool(self.pairs) and all(p.gold_tokens is not None for p in self.pairs)

    def subset(self, indices):
        return replace(self, pairs=[self.pairs[i] for i in indices], meta=dict(self.meta))

    # -- serialisation -----------------------------------------------------

    def to_dict(self):
        return {
            "source_vocab": self.source_vocab.to_list(),
            "target_vocab": self.target_vocab.to_list(),
            "compounds": {str(k): list(v) for k, v in sorted(self.compounds.items())},
            "meta": self.meta,
            "pairs": [
                {"src": list(p.source_symbols), "tgt": list(p.target_words),
                 "gold": None if p.gold_tokens is None else [list(s) for s in p.gold_tokens]}
                for p in self.pairs
            ],
        }

    @classmethod
    def from_dict(cls, d):
        pairs = [
            SentencePair(tuple(p["src"]), tuple(p["tgt"]),
                         None if p["gold"] is None else tuple(tuple(s) for s in p["gold"]))
            for p in d["pairs"]
        ]
        return cls(pairs, Vocabulary(d["source_vocab"]), Vocabulary(d["target_vocab"]),
                   meta=d.get("meta", {}),
                   compounds={int(k): tuple(v) for k, v in d.get("compounds", {}).items()})

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def read_inventory(path):
    with open(path, encoding="utf-8") as fh:
        return [unicodedata.normalize("NFC", ln.strip()) for ln in fh if ln.strip()]


def split_symbols(text, inventory=None):
    """NFC-normalise, drop whitespace and cut into symbols.

    Without an inventory every codepoint is a symbol; otherwise inventory
    entries are matched longest-first and anything else falls back to a
    single codepoint.
    """
    text = "".join(unicodedata.normalize("NFC", text).split())
    if not inventory:
        return list(text)
    by_len = sorted({g for g in inventory if g}, key=len, reverse=True)
    out = []
    i = 0
    while i < len(text):
        for g in by_len:
            if text.startswith(g, i):
                out.append(g)
                i += len(g)
                break
        else:
            out.append(text[i])
            i += 1
    return out


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def load_parallel(source_path, target_path, gold_path=None, symbol_inventory=None):
    """Load line-aligned source/target (and optional gold) files into a Corpus."""
    src_lines = _read_lines(source_path)
    tgt_lines = _read_lines(target_path)
    gold_lines = _read_lines(gold_path) if gold_path is not None else None
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(f"line-count mismatch: {len(src_lines)} source vs {len(tgt_lines)} target lines")
    if gold_lines is not None and len(gold_lines) != len(src_lines):
        raise CorpusError(f"line-count mismatch: {len(src_lines)} source vs {len(gold_lines)} gold lines")
    inventory = read_inventory(symbol_inventory) if symbol_inventory is not None else None

    src_seqs, tgt_seqs, spans = [], [], []
    for n, src in enumerate(src_lines):
        symbols = split_symbols(src, inventory)
        words = unicodedata.normalize("NFC", tgt_lines[n]).split()
        if not symbols or not words:
            raise CorpusError(f"line {n + 1}: empty sentence")
        src_seqs.append(symbols)
        tgt_seqs.append(words)
        if gold_lines is not None:
            spans.append(gold_spans(symbols, gold_lines[n], inventory, line=n + 1))

    meta = {
        "source_path": str(source_path),
        "target_path": str(target_path),
        "gold_path": None if gold_path is None else str(gold_path),
        "symbol_inventory": None if symbol_inventory is None else str(symbol_inventory),
        "normalization": "NFC",
    }
    return _assemble(src_seqs, tgt_seqs, spans if gold_lines is not None else None, meta)


def gold_spans(symbols, gold_line, inventory=None, line=None):
    """Spans over ``symbols`` implied by a whitespace-segmented gold line."""
    where = f"line {line}: " if line is not None else ""
    words = unicodedata.normalize("NFC", gold_line).split()
    if "".join(words) != "".join(symbols):
        raise CorpusError(f"{where}gold text does not match the source after removing whitespace")
    spans, pos = [], 0
    for w in words:
        k = len(split_symbols(w, inventory))
        spans.append((pos, pos + k))
        pos += k
    if pos != len(symbols) or _regroup(symbols, spans) != words:
        raise CorpusError(f"{where}gold words cut through a multi-codepoint symbol")
    return tuple(spans)


def _regroup(symbols, spans):
    return ["".join(symbols[s:e]) for s, e in spans]


def _assemble(src_seqs, tgt_seqs, spans, meta):
    sv = Vocabulary.from_counts(Counter(s for seq in src_seqs for s in seq))
    tv = Vocabulary.from_counts(Counter(w for seq in tgt_seqs for w in seq))
    pairs = [
        SentencePair(sv.encode(s), tv.encode(t), None if spans is None else spans[k])
        for k, (s, t) in enumerate(zip(src_seqs, tgt_seqs))
    ]
    return Corpus(pairs, sv, tv, meta)


def build_vocab(corpus, side):
    """Deterministic vocabulary of one side of ``corpus`` (source or target)."""
    if not corpus.pairs:
        raise CorpusError("empty corpus")
    if side == "source":
        counts = Counter(t for p in corpus.pairs for t in corpus.source_surface(p))
    elif side == "target":
        counts = Counter(t for p in corpus.pairs for t in corpus.target_surface(p))
    else:
        raise ValueError(f"side must be 'source' or 'target', not {side!r}")
    return Vocabulary.from_counts(counts)


def split_train_dev(corpus, dev_fraction=0.1, seed=0, dev_size=None):
    """Seeded shuffle, then cut ``round(dev_fraction * len)`` pairs off for dev.

    ``dev_size`` overrides the fraction with an exact count. Training
    vocabularies are rebuilt from the training part only; dev tokens unseen
    in training map to the unknown id.
    """
    if not 0 < dev_fraction < 1:
        raise CorpusError("dev_fraction must be in (0, 1)")
    n_dev = int(round(dev_fraction * len(corpus))) if dev_size is None else int(dev_size)
    if n_dev < 1 or n_dev >= len(corpus):
        raise CorpusError(f"corpus of {len(corpus)} pairs is too small for a {dev_fraction} split")
    order = list(range(len(corpus)))
    random.Random(seed).shuffle(order)
    dev_idx, train_idx = sorted(order[:n_dev]), sorted(order[n_dev:])

    train = corpus.subset(train_idx)
    sv = build_vocab(train, "source")
    tv = build_vocab(train, "target")
    # compound tokens keep their place even if a split loses them
    for cid in sorted(corpus.compounds):
        for a in corpus.compounds[cid]:
            sv.add(corpus.source_vocab.itos[a])
        sv.add(corpus.source_vocab.itos[cid])
    compounds = {sv.id(corpus.source_vocab.itos[cid]): tuple(sv.id(corpus.source_vocab.itos[a]) for a in atoms)
                 for cid, atoms in corpus.compounds.items()}

    def recode(idx):
        pairs = []
        for i in idx:
            p = corpus.pairs[i]
            pairs.append(SentencePair(sv.encode(corpus.source_surface(p)),
                                      tv.encode(corpus.target_surface(p)), p.gold_tokens))
        meta = dict(corpus.meta, split_seed=seed, dev_fraction=dev_fraction)
        return Corpus(pairs, sv, tv, meta, dict(compounds))

    return recode(train_idx), recode(dev_idx)


def gold_type_counts(corpus):
    counts = Counter()
    for p in corpus.pairs:
        counts.update(corpus.gold_words(p))
    return counts


def inject_supervision(corpus, k):
    """Merge every gold occurrence of the ``k`` most frequent gold words.

    Returns a new corpus with a mixed source representation: selected words
    become single tokens, every other position stays a single symbol.
    """
    if k < 1:
        raise CorpusError("k must be at least 1")
    if not corpus.has_gold:
        raise CorpusError("supervision needs a gold segmentation for every pair")
    if corpus.compounds:
        raise CorpusError("corpus already carries injected tokens")
    counts = gold_type_counts(corpus)
    if k > len(counts):
        raise CorpusError(f"k={k} exceeds the {len(counts)} gold types")
    selected = sorted(counts, key=lambda w: (-counts[w], w))[:k]

    sv = Vocabulary(corpus.source_vocab.tokens)
    compounds = {}
    for w in selected:
        if w in sv:  # single-symbol word; already a token
            continue
        cid = sv.add(w)
        compounds[cid] = None
    chosen = set(selected)

    pairs = []
    for p in corpus.pairs:
        syms = corpus.symbol_surface(p)
        tokens = []
        for s, e in p.gold_tokens:
            word = "".join(syms[s:e])
            if word in chosen:
                tokens.append(word)
                cid = sv.id(word)
                if cid in compounds and compounds[cid] is None:
                    compounds[cid] = tuple(sv.id(x) for x in syms[s:e])
            else:
                tokens.extend(syms[s:e])
        pairs.append(SentencePair(sv.encode(tokens), p.target_words, p.gold_tokens))
    compounds = {cid: atoms for cid, atoms in compounds.items() if atoms is not None}
    meta = dict(corpus.meta, supervised_k=k, supervised_types=selected)
    return Corpus(pairs, sv, corpus.target_vocab, meta, compounds)


def corpus_stats(corpus):
    """Token/type counts of both sides (and of the gold side when present)."""
    n = len(corpus)
    src_tokens = sum(len(corpus.symbol_ids(p)) for p in corpus.pairs)
    tgt = Counter(w for p in corpus.pairs for w in corpus.target_surface(p))
    out = {
        "sentences": n,
        "source_symbols": src_tokens,
        "source_symbol_types": len({s for p in corpus.pairs for s in corpus.symbol_surface(p)}),
        "target_tokens": sum(tgt.values()),
        "target_types": len(tgt),
        "target_tokens_per_sentence": sum(tgt.values()) / n if n else 0.0,
    }
    if corpus.has_gold:
        gold = gold_type_counts(corpus)
        out["gold_tokens"] = sum(gold.values())
        out["gold_types"] = len(gold)
        out["gold_tokens_per_sentence"] = sum(gold.values()) / n if n else 0.0
    return out
