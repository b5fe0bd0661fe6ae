"""Exception hierarchy shared by all echotrace modules."""


class EchotraceError(Exception):
    """Base class for library errors."""


class ConfigurationError(EchotraceError):
    """Bad or inconsistent configuration (files, mappings, parameters)."""


class MeshFormatError(ConfigurationError):
    """A mesh file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidInputError(EchotraceError, ValueError):
    """Input data violates a documented precondition."""


class SimulationError(EchotraceError):
    """The simulation could not produce a result."""
