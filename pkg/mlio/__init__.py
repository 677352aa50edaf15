"""Multi-level informed optimization with decomposed Kriging surrogates."""

__version__ = "0.1.0"
