"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class DCBenchError(Exception):
    exit_code = 1


class ConfigError(DCBenchError):
    """Bad configuration: missing files, incomplete maps, bad arguments."""

    exit_code = 2


class ArgumentError(ConfigError, ValueError):
    pass


class CompletenessError(ConfigError):
    def __init__(self, message, gaps=()):
        super().__init__(message)
        self.gaps = list(gaps)


class DataError(DCBenchError):
    exit_code = 3


class ParseError(DataError):
    """Malformed input bytes; ``offset`` is where decoding failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedFormatError(ParseError):
    pass


class NotFoundError(DataError):
    pass


class InsufficientDataError(DCBenchError):
    exit_code = 4


class UndefinedMetricsError(InsufficientDataError):
    pass


class StageError(DCBenchError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
