import logging
import sys
from typing import Any, TextIO


_default_root_logger = logging.getLogger()


def create_stream_logging_handler(
    log_level: int,
    root_logger: logging.Logger = _default_root_logger,
    stream: TextIO | None = None,
    fmt: str | None = None,
) -> logging.StreamHandler[Any]:
    """
    Sets up logging with a single handler which emits logs to the given stream (stderr when
    omitted).
    """
    stream_handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
    stream_handler.setLevel(log_level)
    if fmt is not None:
        stream_handler.setFormatter(logging.Formatter(fmt))

    root_logger.setLevel(log_level)
    root_logger.addHandler(stream_handler)

    return stream_handler
