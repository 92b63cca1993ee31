"""Exception hierarchy shared by the readers, the tree and the CLI."""


class DataError(Exception):
    """Input data is malformed or cannot be processed (CLI exit code 2)."""


class LasError(DataError):
    pass


class BadSignature(LasError):
    pass


class UnsupportedFormat(LasError):
    pass


class Truncated(LasError):
    """The byte source ended early.

    ``position`` is the number of bytes (for headers) or complete point
    records (for point data) that were available before the end.
    """

    def __init__(self, message: str, position: int = 0):
        super().__init__(message)
        self.position = position


class NonPositiveScale(LasError):
    pass


class QuantizationOverflow(LasError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyCloud(DataError):
    pass


class EmptyTree(DataError):
    pass


class Degenerate(DataError):
    """All candidate points coincide; no coordinate split can separate them."""


class NoWorkers(DataError):
    pass


class InvalidSpec(DataError):
    pass
