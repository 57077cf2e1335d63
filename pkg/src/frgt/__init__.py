"""Graph-transformer flow reconstruction from sparse surface pressure."""

__version__ = "0.1.0"
