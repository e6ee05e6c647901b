"""Exception hierarchy shared by every module.

The command line maps these onto exit codes: configuration problems give 2,
numerical guards give 3.
"""


class ContmeasError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ContmeasError, ValueError):
    """Invalid parameters, e.g. a discretisation that cannot be valid."""


class ScenarioError(ConfigurationError):
    """Scenario text that fails to parse or validate."""

    def __init__(self, message, line=None, column=None, key=None):
        self.line = line
        self.column = column
        self.key = key
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class NumericalGuardError(ContmeasError, ArithmeticError):
    """A numerical safety check failed."""


class StepSizeError(NumericalGuardError):
    """Time step too large for the requested scheme."""


class TruncationError(NumericalGuardError):
    """Population leaked into the top levels of a truncated basis."""


class DomainError(NumericalGuardError):
    """A formula was evaluated outside its domain (singular denominator etc.)."""


class NoZeroSupport(NumericalGuardError):
    """A phase difference is requested across a vanishing photon probability."""


class DivisionGuard(NumericalGuardError):
    """Inversion denominator too small; pick a different probe time."""


class AdjacentZeros(NumericalGuardError):
    """Two neighbouring probabilities vanish, so phases cannot be bridged."""


class IllConditioned(NumericalGuardError):
    """Linear inversion is too badly conditioned to trust."""


class CompletenessError(ConfigurationError):
    """A reconstruction dataset required by the scheme is missing."""
