"""Desk-scale audio-conditioned language modeling for speech emotion recognition."""

__version__ = "0.1.0"

from . import backend  # noqa: F401  (selects the kernel implementation at import)
from .errors import SelmError  # noqa: F401
