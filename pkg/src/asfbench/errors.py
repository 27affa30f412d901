"""Exception hierarchy shared across the package."""


class AsfBenchError(Exception):
    """Base class for all package errors."""


class KBLoadError(AsfBenchError):
    """The knowledge base file failed to parse or violates an invariant."""


class StreamFormatError(AsfBenchError):
    """A detection stream record is malformed."""


class GalleryFormatError(AsfBenchError):
    """The reference gallery file is malformed."""


class StateLoadError(AsfBenchError):
    """A persisted fusion state is unreadable or violates an invariant."""


class ConfigError(AsfBenchError):
    """The benchmark configuration is invalid."""


class BackendError(AsfBenchError):
    """A text-generation backend call failed after retries."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries
