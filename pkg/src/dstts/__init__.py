"""Dual-style acoustic model for expressive speech synthesis, in numpy."""

from .config import RunConfig, tiny_config
from .model import DSTTS, Utterance

__version__ = "0.1.0"
__all__ = ["DSTTS", "RunConfig", "Utterance", "tiny_config"]
