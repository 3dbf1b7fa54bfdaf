"""modelcrafter: subjective visual concepts -> lightweight binary classifiers."""

__version__ = "0.1.0"
