"""Contrastive pre-training toolkit for trigger-word detection."""

__version__ = "0.1.0"

CANONICAL_RATE = 16000
