from pathlib import Path


class VisRecException(Exception):
    """The parent exception for all visualrec exceptions"""


class DataFormatError(VisRecException, ValueError):
    """A ratings, feature or sidecar file could not be parsed"""

    def __init__(
        self,
        message: str,
        *,
        path: Path | str | None = None,
        line: int | None = None,
        offset: int | None = None,
    ) -> None:
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"byte offset {offset}")
        super().__init__(f"{': '.join(location)}: {message}" if location else message)
        self.path = path
        self.line = line
        self.offset = offset


class DimensionMismatchError(VisRecException, ValueError):
    pass


class NonFiniteError(VisRecException, ArithmeticError):
    pass


class UnknownIndexError(VisRecException, IndexError):
    pass


class UnknownKeyError(VisRecException, KeyError):
    def __init__(self, kind: str, key: str) -> None:
        super().__init__(f"unknown {kind} key: {key!r}")
        self.kind = kind
        self.key = key

    def __str__(self) -> str:
        # KeyError quotes its argument otherwise
        return str(self.args[0])


class SplitError(VisRecException, ValueError):
    pass


class CheckpointError(VisRecException):
    pass


class ModelKindMismatchError(CheckpointError):
    pass


class DivergenceError(VisRecException):
    def __init__(self, message: str, *, epoch: int, batch: int | None = None) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ConfigError(VisRecException):
    """Invalid configuration or unmet data precondition"""
