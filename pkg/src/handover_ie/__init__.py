"""Sequence-labeling toolkit for clinical handover form filling."""

__version__ = "0.1.0"
