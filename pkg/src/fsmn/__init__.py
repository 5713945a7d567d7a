"""Feedforward sequential memory network language models in numpy."""

__version__ = "0.1.0"
