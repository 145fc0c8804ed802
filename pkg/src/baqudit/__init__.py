"""Level structure, pulse compilation and noisy simulation of a 137Ba+ qudit."""

__version__ = "0.1.0"
