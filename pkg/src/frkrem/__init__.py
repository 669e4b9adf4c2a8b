"""Fixed Rank Kriging radio environment maps."""

__version__ = "0.1.0"
