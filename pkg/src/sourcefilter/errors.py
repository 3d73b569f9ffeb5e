"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside the range an operation accepts."""


class DomainError(ValueError):
    """A point lies outside the domain where a quantity is defined."""


class ConfigError(ValueError):
    """A configuration file is malformed or fails validation."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)
