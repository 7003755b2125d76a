"""protoset: prototype-based summaries for set-structured data via entropic OT."""

__version__ = "0.1.0"
