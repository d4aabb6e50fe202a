"""Head-aligned automatic channel pruning for toy vision transformers."""

__version__ = "0.1.0"
