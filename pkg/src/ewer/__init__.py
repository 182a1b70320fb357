"""Reference-free word error rate estimation for ASR output."""

__version__ = "0.1.0"
