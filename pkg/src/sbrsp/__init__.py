"""Rural school bus routing and scheduling toolkit."""

__version__ = "0.1.0"
