"""Seeded synthetic parallel corpora with a known segmentation.

A random lexicon of unique symbol strings is paired one-to-one with
translation words. Sentences draw lexicon entries from a Zipf law; the
source line is the whitespace-free concatenation, the gold line the same
words space-separated, and the target line their translations (in the same
order unless local swap noise is requested).
"""

import itertools
import os
import random
from dataclasses import asdict, dataclass

# a-z, then Greek lowercase for larger alphabets
_ALPHABET = "abcdefghijklmnopqrstuvwxyz" + "".join(chr(c) for c in range(0x3B1, 0x3CA))


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    lexicon_size: int = 30
    alphabet_size: int = 10
    word_length: tuple = (2, 4)
    sentence_length: tuple = (3, 8)
    sentences: int = 3000
    zipf_exponent: float = 1.0
    seed: int = 7
    swap_rate: float = 0.0


@dataclass
class SynthCorpus:
    spec: SynthSpec
    lexicon: list  # rank order: entry 0 is the most probable
    translations: list
    source: list
    target: list
    gold: list

    def write(self, out_dir):
        """Write source.txt / target.txt / gold.txt; returns their paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {}
        for name, lines in (("source", self.source), ("target", self.target), ("gold", self.gold)):
            path = os.path.join(out_dir, f"{name}.txt")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("\n".join(lines) + "\n")
            paths[name] = path
        return paths

    def oracle_segmentation(self, target_line):
        """Source words recovered from a target line through the bijection."""
        back = dict(zip(self.translations, self.lexicon))
        return [back[w] for w in target_line.split()]


def count_strings(alphabet_size, lo, hi):
    return sum(alphabet_size**k for k in range(lo, hi + 1))


def _lexicon(spec, rng):
    lo, hi = spec.word_length
    if not 1 <= lo <= hi:
        raise InfeasibleSpec(f"bad word length range {spec.word_length}")
    if not 1 <= spec.alphabet_size <= len(_ALPHABET):
        raise InfeasibleSpec(f"alphabet size must be in [1, {len(_ALPHABET)}]")
    available = count_strings(spec.alphabet_size, lo, hi)
    if spec.lexicon_size > available:
        raise InfeasibleSpec(
            f"{spec.lexicon_size} words requested but only {available} strings of length "
            f"{lo}-{hi} exist over {spec.alphabet_size} symbols"
        )
    letters = _ALPHABET[: spec.alphabet_size]
    if available <= 200_000:
        pool = ["".join(t) for k in range(lo, hi + 1) for t in itertools.product(letters, repeat=k)]
        return rng.sample(pool, spec.lexicon_size)
    seen, out = set(), []
    while len(out) < spec.lexicon_size:
        w = "".join(rng.choice(letters) for _ in range(rng.randint(lo, hi)))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def generate(spec=SynthSpec()):
    """Build the corpus in memory (see :meth:`SynthCorpus.write`)."""
    if spec.sentences < 1 or spec.lexicon_size < 1:
        raise InfeasibleSpec("need at least one sentence and one word")
    slo, shi = spec.sentence_length
    if not 1 <= slo <= shi:
        raise InfeasibleSpec(f"bad sentence length range {spec.sentence_length}")
    rng = random.Random(spec.seed)
    lexicon = _lexicon(spec, rng)
    width = len(str(spec.lexicon_size))
    translations = [f"t{r + 1:0{width}d}" for r in range(spec.lexicon_size)]
    weights = [(r + 1) ** -spec.zipf_exponent for r in range(spec.lexicon_size)]

    source, target, gold = [], [], []
    for _ in range(spec.sentences):
        ranks = rng.choices(range(spec.lexicon_size), weights=weights, k=rng.randint(slo, shi))
        words = [lexicon[r] for r in ranks]
        trans = [translations[r] for r in ranks]
        if spec.swap_rate > 0:
            i = 0
            while i + 1 < len(trans):
                if rng.random() < spec.swap_rate:
                    trans[i], trans[i + 1] = trans[i + 1], trans[i]
                    i += 2
                else:
                    i += 1
        source.append("".join(words))
        gold.append(" ".join(words))
        target.append(" ".join(trans))
    return SynthCorpus(spec, lexicon, translations, source, target, gold)


def spec_to_dict(spec):
    return asdict(spec)
