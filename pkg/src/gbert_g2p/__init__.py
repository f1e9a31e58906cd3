"""Grapheme-to-phoneme conversion with a pretrained grapheme encoder (GBERT)."""

__version__ = "0.1.0"
