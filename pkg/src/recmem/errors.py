"""Exception hierarchy shared across the memory engine."""


class RecMemError(Exception):
    """Base class for all engine errors."""


class EmptyText(RecMemError, ValueError):
    pass


class RemoteUnavailable(RecMemError):
    """Network or HTTP failure talking to a remote service (retryable)."""


class DuplicateId(RecMemError, KeyError):
    pass


class UnknownId(RecMemError, KeyError):
    pass


class DimMismatch(RecMemError, ValueError):
    pass


class DuplicateTurnId(DuplicateId):
    pass


class LlmFailure(RecMemError):
    """The LLM call could not be completed."""


class LlmTimeout(LlmFailure):
    pass


class MalformedLlmOutput(RecMemError, ValueError):
    """The LLM answered, but not in the structure the caller requires."""


class UnknownConversation(RecMemError, KeyError):
    pass


class ConcurrentIngest(RecMemError, RuntimeError):
    pass


class ParseError(RecMemError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class UnsupportedFormat(RecMemError, ValueError):
    pass


class VersionMismatch(RecMemError):
    pass


class SnapshotIoError(RecMemError, OSError):
    pass
