"""Benchmarking framework for non-intrusive MOS predictors of synthesized speech."""

__version__ = "0.1.0"
