"""Progressive image restoration as pseudo-video trajectory generation, at desk scale."""

__version__ = "0.1.0"
