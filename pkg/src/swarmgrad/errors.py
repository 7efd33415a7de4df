"""Exception hierarchy shared across the package."""


class SwarmError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(SwarmError, ValueError):
    """A caller violated a documented precondition."""


class ProtocolError(SwarmError, RuntimeError):
    """The coordinator/worker exchange broke its contract (wrong epoch,
    duplicate publish, barrier timeout, malformed message)."""


class ConfigError(SwarmError, ValueError):
    """An experiment configuration file is invalid.

    Carries the offending key when known.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
