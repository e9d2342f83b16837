"""Proto-token reconstruction against a frozen causal transformer."""

__version__ = "0.1.0"
