"""Exception hierarchy shared by every pipeline stage."""


class SemflError(Exception):
    """Base class for all package errors."""


class ArgumentError(SemflError, ValueError):
    """A caller passed an argument outside the operation's domain."""


class ConfigError(SemflError):
    """Invalid run configuration."""


class ParseError(SemflError):
    """An input document could not be parsed."""


class IntegrityError(SemflError):
    """Inputs are individually well-formed but inconsistent with each other."""


class StalenessError(IntegrityError):
    """A prerequisite artifact is missing or was produced from different inputs."""


class UndefinedModularityError(SemflError, ArithmeticError):
    """Modularity requested for a graph with zero total edge weight."""


class BackendError(SemflError):
    """A chat or embedding backend failed after exhausting its retries."""


class TransientBackendError(BackendError):
    """A single backend attempt failed in a way that is worth retrying."""


class ExtractionError(SemflError):
    """A model response could not be parsed into the expected report."""

    def __init__(self, message, raw_response=None):
        super().__init__(message)
        self.raw_response = raw_response


class ProtocolParseError(SemflError):
    """A query-generation response matched neither protocol shape."""


class QueryGenError(SemflError):
    """The query-generation loop could not produce a query set."""

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = transcript or []
