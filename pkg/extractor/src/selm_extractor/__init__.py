"""Offline speech-encoder feature exporter (see README)."""

__version__ = "0.1.0"
