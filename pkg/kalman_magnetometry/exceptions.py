# coding: utf-8
"""Exception hierarchy shared by every module of the package."""


class Error(Exception):
    pass


class ModelValidityWarning(UserWarning):
    """Issued when a result is computed outside the regime its model assumes."""


class ParameterError(Error, ValueError):
    """Raised with every violated invariant of a parameter set."""

    def __init__(self, violations):
        self.violations = list(violations)
        super(ParameterError, self).__init__(
            "; ".join("{}: {}".format(field, message) for field, message in self.violations))

    @property
    def fields(self):
        return [field for field, _ in self.violations]


class ConfigError(Error, ValueError):

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        context = []
        if line is not None:
            context.append("line {}".format(line))
        if field is not None:
            context.append("field '{}'".format(field))
        if context:
            message = "{} ({})".format(message, ", ".join(context))
        super(ConfigError, self).__init__(message)


class GridError(Error, ValueError):
    pass


class StabilityError(Error, ArithmeticError):
    """Numerical state lost an invariant; usually dt is too large."""


class ValidityError(Error, ArithmeticError):
    """A closed form was evaluated where it is undefined."""
