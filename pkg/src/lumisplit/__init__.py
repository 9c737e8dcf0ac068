"""Low-light video enhancement via view-dependent / view-independent decomposition."""

__version__ = "0.1.0"
