"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
provider/network problems exit 3, internal invariant violations exit 4.
"""


class LaraError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LaraError):
    """Bad user-supplied configuration: files, templates, flags, weights."""


class ProviderError(LaraError):
    """A backend could not produce logits (network failure, exhausted retries)."""

    def __init__(self, message, endpoint=None):
        if endpoint:
            message = f"{message} (endpoint: {endpoint})"
        super().__init__(message)
        self.endpoint = endpoint


class ProtocolError(ProviderError):
    """The backend answered, but not in the expected completion wire shape."""
