"""Detection of intermittent changes of unknown duration."""

__version__ = "0.1.0"
