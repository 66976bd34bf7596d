"""Per-joint acceleration distance fields used as a human motion prior."""

__version__ = "0.1.0"
