"""Utility modules for visualrec."""

from .logging import create_stream_logging_handler


__all__ = ["create_stream_logging_handler"]
