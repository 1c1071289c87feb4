"""Time-of-day conditioned image sequence synthesis from a single photo."""

__version__ = "0.1.0"
