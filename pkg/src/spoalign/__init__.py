"""Listener-screened, listener-standardized training of cosine audio-text alignment scorers."""

__version__ = "0.1.0"
