"""Exception types shared across the engine."""


class ConfigurationError(ValueError):
    """A config field or argument is out of its legal range."""


class WindowExceededError(RuntimeError):
    """An input sequence does not fit the provider's inference window."""


class ProtocolError(RuntimeError):
    """Malformed or unexpected traffic on the provider wire protocol."""


class UnsupportedModeError(RuntimeError):
    """The provider does not implement the requested operating mode."""
