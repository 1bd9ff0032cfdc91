"""Glue between corpora, alignment matrices and segmentations."""

from . import alignment
from .alignment import Segmentation


def gold_segmentations(corpus):
    return [Segmentation(corpus.symbol_surface(p), p.gold_tokens) for p in corpus.pairs]


def postprocess(matrices, smooth=False, fuse_with=None, smooth_after_fusion=False, axis="symbols"):
    """Optional smoothing, fusion with a second matrix set, and second smoothing."""
    out = list(matrices)
    other = None if fuse_with is None else list(fuse_with)
    if smooth:
        out = [alignment.smooth(m, axis) for m in out]
        if other is not None:
            other = [alignment.smooth(m, axis) for m in other]
    if other is not None:
        if len(other) != len(out):
            raise ValueError(f"cannot fuse {len(out)} matrices with {len(other)}")
        out = [alignment.fuse(a, b) for a, b in zip(out, other)]
        if smooth_after_fusion:
            out = [alignment.smooth(m, axis) for m in out]
    return out


def segment_corpus(corpus, matrices):
    """Hard-align and cut every matrix; spans refer to the atomic symbols.

    Injected word tokens carry known boundaries, so they never merge with a
    neighbour even when the (smoothed) alignment would join them.
    """
    if len(matrices) != len(corpus):
        raise ValueError(f"{len(matrices)} matrices for {len(corpus)} sentences")
    segs = []
    for pair, m in zip(corpus.pairs, matrices):
        lengths = fixed = None
        if corpus.compounds:
            lengths = corpus.token_lengths(pair)
            fixed = [t in corpus.compounds for t in pair.source_symbols]
        segs.append(alignment.discover(m, lengths, corpus.symbol_surface(pair), fixed))
    return segs
