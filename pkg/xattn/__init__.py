"""xattn - block-sparse attention with antidiagonal block scoring."""

__version__ = "0.1.0"
