"""Token and type scores for segmentations, and vocabulary statistics."""

import random
from collections import Counter
from dataclasses import asdict, dataclass

from .alignment import Segmentation


def fscore(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    fscore: float
    correct: int
    hypothesis: int
    gold: int


def _prf(correct, n_hyp, n_gold):
    p = correct / n_hyp if n_hyp else 0.0
    r = correct / n_gold if n_gold else 0.0
    return PRF(p, r, fscore(p, r), correct, n_hyp, n_gold)


def token_metrics(hypothesis, gold):
    """Exact-span token precision/recall/F over parallel lists of segmentations."""
    if len(hypothesis) != len(gold):
        raise ValueError(f"{len(hypothesis)} hypothesis vs {len(gold)} gold sentences")
    correct = n_hyp = n_gold = 0
    for k, (h, g) in enumerate(zip(hypothesis, gold)):
        if tuple(h.symbols) != tuple(g.symbols):
            raise ValueError(f"sentence {k}: hypothesis and gold cover different symbols")
        gold_spans = set(g.spans)
        correct += sum(1 for s in h.spans if s in gold_spans)
        n_hyp += len(h.spans)
        n_gold += len(g.spans)
    return _prf(correct, n_hyp, n_gold)


def type_metrics(hypothesis_types, gold_types, exclude=()):
    """Set overlap of two vocabularies (optionally without the ``exclude`` types)."""
    drop = set(exclude)
    h = set(hypothesis_types) - drop
    g = set(gold_types) - drop
    return _prf(len(h & g), len(h), len(g))


def vocabulary(segmentations):
    return {t for s in segmentations for t in s.tokens}


def rank_frequency(segmentations):
    """``[(rank, type, count), ...]`` by descending count, ties lexicographic.

    Accepts Segmentation objects or plain token lists.
    """
    counts = Counter()
    for s in segmentations:
        counts.update(s.tokens if isinstance(s, Segmentation) else s)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(r + 1, t, c) for r, (t, c) in enumerate(ordered)]


def length_histogram(types, length=len):
    """Fraction of types per length (in symbols) and the mean type length."""
    types = list(set(types))
    if not types:
        return {}, 0.0
    counts = Counter(length(t) for t in types)
    hist = {k: counts[k] / len(types) for k in sorted(counts)}
    mean = sum(length(t) for t in types) / len(types)
    return hist, mean


@dataclass
class EvalReport:
    token: PRF | None
    types: PRF
    excluded_types: int = 0

    @property
    def correct_types(self):
        return self.types.correct

    @property
    def generated_types(self):
        return self.types.hypothesis

    @property
    def gold_types(self):
        return self.types.gold

    def as_dict(self):
        out = {}
        if self.token is not None:
            out.update({f"token_{k}": v for k, v in asdict(self.token).items()})
        out.update({f"type_{k}": v for k, v in asdict(self.types).items()})
        out["excluded_types"] = self.excluded_types
        return out

    def to_kv(self):
        return "".join(f"{k}={v!r}\n" for k, v in self.as_dict().items())

    def to_text(self):
        lines = []
        if self.token is not None:
            t = self.token
            lines.append(f"tokens  P {100 * t.precision:6.2f}  R {100 * t.recall:6.2f}  F {100 * t.fscore:6.2f}"
                         f"  ({t.correct} correct / {t.hypothesis} generated / {t.gold} gold)")
        t = self.types
        lines.append(f"types   P {100 * t.precision:6.2f}  R {100 * t.recall:6.2f}  F {100 * t.fscore:6.2f}"
                     f"  ({t.correct} correct / {t.hypothesis} generated / {t.gold} gold)")
        if self.excluded_types:
            lines.append(f"({self.excluded_types} supervised types excluded)")
        return "\n".join(lines) + "\n"


def evaluate(hypothesis, gold, exclude_types=(), tokens=True, gold_types=None):
    """Full report; ``gold_types`` overrides the reference vocabulary (recall denominator)."""
    ref = vocabulary(gold) if gold_types is None else set(gold_types)
    types = type_metrics(vocabulary(hypothesis), ref, exclude_types)
    tok = token_metrics(hypothesis, gold) if tokens else None
    return EvalReport(tok, types, len(set(exclude_types)))


def random_boundaries(gold, seed=0, probability=None):
    """Baseline that cuts each inter-symbol gap independently.

    The default cut probability reproduces the gold mean token length:
    ``(tokens - sentences) / (symbols - sentences)``.
    """
    if probability is None:
        n_tok = sum(len(g.spans) for g in gold)
        n_sym = sum(len(g.symbols) for g in gold)
        gaps = n_sym - len(gold)
        probability = (n_tok - len(gold)) / gaps if gaps else 0.0
    rng = random.Random(seed)
    out = []
    for g in gold:
        spans, start = [], 0
        for i in range(1, len(g.symbols)):
            if rng.random() < probability:
                spans.append((start, i))
                start = i
        spans.append((start, len(g.symbols)))
        out.append(Segmentation(g.symbols, spans))
    return out


def write_table(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(x) for x in row) + "\n")
