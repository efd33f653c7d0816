"""Online control of unknown linear systems with geometric exploration."""

__version__ = "0.1.0"
