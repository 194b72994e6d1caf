"""Exception hierarchy shared by all modules."""


class EegSeqError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(EegSeqError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(EegSeqError, ValueError):
    """A call violated a documented precondition."""


class ConfigError(EegSeqError, ValueError):
    """A layer, model, training or session configuration is invalid."""


class DataError(EegSeqError, ValueError):
    """Input data is inconsistent with what an operation needs."""


class ParseError(DataError):
    """A file on disk could not be parsed."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingFileError(ParseError):
    pass


class MalformedRowError(ParseError):
    pass


class NonFiniteSampleError(ParseError):
    pass


class LabelError(ParseError):
    pass


class MetricError(EegSeqError, ValueError):
    """A metric is undefined for the given input."""


class UnsupportedOperationError(EegSeqError, TypeError):
    """The operation does not apply to this kind of model."""


class CheckpointError(EegSeqError):
    """A checkpoint file is unreadable or inconsistent."""
