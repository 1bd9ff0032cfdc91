"""Word discovery from the soft alignments of a small attentional translation model."""

__version__ = "0.1.0"
