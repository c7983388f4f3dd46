"""Build patient event graphs from relational EMR tables and query them."""

__version__ = "0.1.0"
