"""Place-specific change detection over view-sequence maps."""

__version__ = "0.1.0"
