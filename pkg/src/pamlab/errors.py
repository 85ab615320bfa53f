"""Exception hierarchy.

The CLI maps ``ConfigError`` (and subclasses) to exit code 1 and any other
``PamlabError`` to exit code 2.
"""


class PamlabError(Exception):
    pass


class DomainError(PamlabError, ValueError):
    """Argument outside the domain where a formula or integral is finite."""


class ConfigError(PamlabError, ValueError):
    """Invalid configuration; ``fields`` names the offending entries."""

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)


class SingularityError(DomainError):
    pass


class DegenerateInputError(DomainError):
    pass


class CapacityError(PamlabError):
    pass


class StatisticsError(PamlabError):
    pass


class UnsupportedRegimeError(PamlabError):
    pass


class BlowUpError(PamlabError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class RegressionError(PamlabError):
    pass


class PersistenceError(PamlabError):
    def __init__(self, message, manifest=None):
        super().__init__(message)
        self.manifest = manifest
