"""From soft attention matrices to segmentations.

Matrices come in two orientations. A ``base`` matrix has one row per target
word (decoder step) and one column per source symbol; a ``reverse`` matrix
has one row per source symbol and one column per target word. Either may
carry a trailing end-of-sentence row, which never takes part in
segmentation.
"""

from dataclasses import dataclass, field, replace

import numpy as np

DIRECTIONS = ("base", "reverse")


class AlignmentError(ValueError):
    pass


@dataclass
class AlignmentMatrix:
    probs: np.ndarray
    row_tokens: list
    col_tokens: list
    eos_row: bool = True
    direction: str = "base"

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.direction not in DIRECTIONS:
            raise AlignmentError(f"unknown direction {self.direction!r}")
        if self.probs.shape != (len(self.row_tokens), len(self.col_tokens)):
            raise AlignmentError(
                f"probabilities {self.probs.shape} do not match "
                f"{len(self.row_tokens)} row / {len(self.col_tokens)} column labels"
            )

    @property
    def body(self):
        """Probabilities without the end-of-sentence row."""
        return self.probs[:-1] if self.eos_row else self.probs

    @property
    def body_rows(self):
        return self.row_tokens[:-1] if self.eos_row else self.row_tokens

    def symbols_by_words(self):
        """Body oriented as (symbols x words) with the symbol labels and word labels."""
        if self.direction == "reverse":
            return self.body, list(self.body_rows), list(self.col_tokens)
        return self.body.T, list(self.col_tokens), list(self.body_rows)


@dataclass
class Segmentation:
    """Token spans tiling a sequence of symbol surfaces.

    ``words`` holds, per token, the index of the aligned target word (the
    bilingual clue), or None for reference segmentations.
    """

    symbols: tuple
    spans: tuple
    words: tuple | None = None
    word_surfaces: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        self.symbols = tuple(self.symbols)
        self.spans = tuple(tuple(s) for s in self.spans)
        pos = 0
        for s, e in self.spans:
            if s != pos or e <= s:
                raise AlignmentError(f"spans do not tile the sequence: {self.spans}")
            pos = e
        if pos != len(self.symbols):
            raise AlignmentError(f"spans cover {pos} of {len(self.symbols)} symbols")

    @property
    def tokens(self):
        return ["".join(self.symbols[s:e]) for s, e in self.spans]

    @classmethod
    def from_words(cls, words, symbols=None):
        """Segmentation from a list of word strings (each character a symbol unless ``symbols`` given)."""
        if symbols is None:
            symbols = [ch for w in words for ch in w]
        spans, pos = [], 0
        syms = list(symbols)
        for w in words:
            start = pos
            acc = ""
            while acc != w:
                if pos >= len(syms) or len(acc) >= len(w):
                    raise AlignmentError(f"word {w!r} does not match the symbols")
                acc += syms[pos]
                pos += 1
            spans.append((start, pos))
        return cls(syms, spans)


# ---------------------------------------------------------------------------
# matrix operations
# ---------------------------------------------------------------------------


def smooth_rows(probs):
    """``a'_i = (a_{i-1} + a_i + a_{i+1}) / 3`` along each row, zero outside."""
    p = np.asarray(probs, dtype=np.float64)
    padded = np.zeros((p.shape[0], p.shape[1] + 2))
    padded[:, 1:-1] = p
    return (padded[:, :-2] + padded[:, 1:-1] + padded[:, 2:]) / 3.0


def smooth(matrix, axis="symbols"):
    """Three-point moving average over neighbouring positions.

    ``axis="symbols"`` (default) averages neighbouring source symbols: the
    rows of a ``base`` matrix, the symbol rows (columns of values) of a
    ``reverse`` one, leaving its end-of-sentence row untouched. ``"row"``
    always averages within rows (encoder positions), ``"column"`` always
    across rows. No renormalisation: only argmaxes are read downstream.
    """
    p = matrix.probs
    if axis == "symbols" and matrix.direction == "base":
        axis = "row"
    if axis == "row":
        q = smooth_rows(p)
    elif axis == "column":
        q = smooth_rows(p.T).T
    elif axis == "symbols":
        q = p.copy()
        n = p.shape[0] - int(matrix.eos_row)
        q[:n] = smooth_rows(p[:n].T).T
    else:
        raise ValueError(f"axis must be 'symbols', 'row' or 'column', not {axis!r}")
    return replace(matrix, probs=q)


def fuse(first, second):
    """Average two matrices for the same sentence after orienting both symbol x word.

    The result is a ``reverse``-oriented matrix with no end-of-sentence row.
    Argument order does not matter.
    """
    a, syms, words = first.symbols_by_words()
    b, _, _ = second.symbols_by_words()
    if a.shape != b.shape:
        raise AlignmentError(f"cannot fuse matrices of shapes {a.shape} and {b.shape}")
    return AlignmentMatrix(0.5 * (a + b), syms, words, eos_row=False, direction="reverse")


def hard_align(matrix):
    """Index of the most probable word for every symbol (leftmost on ties)."""
    p, _, _ = matrix.symbols_by_words()
    return np.argmax(p, axis=1).astype(np.int64)


def segment(symbols, alignment, word_surfaces=None, fixed=None):
    """Cut between consecutive symbols aligned to different words.

    ``fixed`` optionally marks positions that are known words on their own
    (injected supervision): they are always cut on both sides.
    """
    alignment = np.asarray(alignment, dtype=np.int64)
    if len(symbols) != len(alignment):
        raise AlignmentError(f"{len(symbols)} symbols but {len(alignment)} alignment links")
    if fixed is None:
        fixed = np.zeros(len(alignment), dtype=bool)
    else:
        fixed = np.asarray(fixed, dtype=bool)
        if len(fixed) != len(alignment):
            raise AlignmentError(f"{len(fixed)} fixed flags for {len(alignment)} symbols")
    spans, words = [], []
    start = 0
    for i in range(1, len(alignment) + 1):
        if i == len(alignment) or alignment[i] != alignment[i - 1] or fixed[i] or fixed[i - 1]:
            spans.append((start, i))
            words.append(int(alignment[start]))
            start = i
    return Segmentation(tuple(symbols), tuple(spans), tuple(words),
                        None if word_surfaces is None else tuple(word_surfaces))


def expand(seg, token_lengths, atomic_symbols):
    """Re-express a segmentation over mixed tokens on the underlying symbols."""
    if len(token_lengths) != len(seg.symbols):
        raise AlignmentError("token lengths do not match the segmented tokens")
    offsets = np.concatenate([[0], np.cumsum(token_lengths)]).astype(int)
    if offsets[-1] != len(atomic_symbols):
        raise AlignmentError("token lengths do not cover the symbol sequence")
    spans = tuple((int(offsets[s]), int(offsets[e])) for s, e in seg.spans)
    return Segmentation(tuple(atomic_symbols), spans, seg.words, seg.word_surfaces)


def discover(matrix, token_lengths=None, atomic_symbols=None, fixed=None):
    """hard_align + segment (+ expand for mixed token inputs) on one matrix."""
    _, syms, words = matrix.symbols_by_words()
    seg = segment(syms, hard_align(matrix), words, fixed)
    if token_lengths is not None:
        seg = expand(seg, token_lengths, atomic_symbols)
    return seg


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def write_matrices(path, matrices):
    """Text blocks: header lines, then one tab-separated row of probabilities per matrix row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, m in enumerate(matrices):
            fh.write(f"sentence\t{k}\n")
            fh.write(f"direction\t{m.direction}\n")
            fh.write(f"eos_row\t{int(m.eos_row)}\n")
            fh.write("rows\t" + "\t".join(m.row_tokens) + "\n")
            fh.write("cols\t" + "\t".join(m.col_tokens) + "\n")
            for row in m.probs:
                fh.write("\t".join(_fmt(x) for x in row) + "\n")
            fh.write("\n")


def read_matrices(path):
    with open(path, encoding="utf-8") as fh:
        blocks = fh.read().split("\n\n")
    out = []
    for block in blocks:
        lines = block.split("\n")
        if not lines or not lines[0]:
            continue
        head = {}
        for ln in lines[:5]:
            key, _, value = ln.partition("\t")
            head[key] = value
        rows = head["rows"].split("\t")
        cols = head["cols"].split("\t")
        probs = np.array([[float(x) for x in ln.split("\t")] for ln in lines[5:5 + len(rows)]])
        out.append(AlignmentMatrix(probs.reshape(len(rows), len(cols)), rows, cols,
                                   eos_row=head["eos_row"] == "1", direction=head["direction"]))
    return out


def write_segmentation(path, segmentations, lexicon_path=None):
    """One line per sentence, tokens separated by spaces.

    With ``lexicon_path``, also write ``token<TAB>aligned word`` per token,
    one blank line between sentences.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seg in segmentations:
            fh.write(" ".join(seg.tokens) + "\n")
    if lexicon_path is not None:
        with open(lexicon_path, "w", encoding="utf-8", newline="\n") as fh:
            for seg in segmentations:
                for tok, w in zip(seg.tokens, seg.words or ()):
                    word = seg.word_surfaces[w] if seg.word_surfaces else str(w)
                    fh.write(f"{tok}\t{word}\n")
                fh.write("\n")


def read_segmentation(path):
    """Token lists per line (the symbol split is per codepoint)."""
    with open(path, encoding="utf-8") as fh:
        return [ln.split() for ln in fh.read().splitlines()]
