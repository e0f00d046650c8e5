"""Exception hierarchy.

``ValidationError`` subclasses signal bad input or configuration (CLI exit
code 2); everything else deriving from ``EventSegError`` is a runtime failure
(exit code 1).
"""


class EventSegError(Exception):
    pass


class ValidationError(EventSegError, ValueError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    pass


class EmptyResultError(EventSegError):
    pass


class InsufficientDataError(EventSegError):
    pass


class SelectionEmptyError(EventSegError):
    def __init__(self, message, report=None):
        self.report = report or {}
        super().__init__(message)


class DegenerateClusteringError(EventSegError):
    pass


class ClassStarvationError(EventSegError):
    pass


class AmbiguousStatesError(EventSegError):
    pass


class SingleClassError(EventSegError, ValueError):
    pass
