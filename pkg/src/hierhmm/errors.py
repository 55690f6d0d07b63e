"""Exception hierarchy shared by the library and the command-line tool."""


class HierHMMError(Exception):
    """Base class for all errors raised by hierhmm."""

    #: Category name reported by the CLI.
    category = "error"


class InvalidParameterError(HierHMMError, ValueError):
    category = "invalid_parameter"


class DomainError(HierHMMError, ValueError):
    """An argument lies outside the support of a density or map."""

    category = "domain"


class NoUniqueStationaryError(HierHMMError, ArithmeticError):
    category = "no_unique_stationary"


class LikelihoodUnderflowError(HierHMMError, ArithmeticError):
    """Every state assigns zero density to an observation.

    ``t`` is the offending (0-based) time index; ``segment`` is filled in
    by the hierarchical layer when the failure happens inside a segment.
    """

    category = "likelihood_underflow"

    def __init__(self, t, segment=None):
        self.t = t
        self.segment = segment
        where = f"time index {t}"
        if segment is not None:
            where = f"segment {segment}, " + where
        super().__init__(f"all states have zero density at {where}")


class LayoutError(HierHMMError, ValueError):
    category = "layout"


class FitFailureError(HierHMMError, RuntimeError):
    """Raised when every optimizer restart failed.

    ``diagnostics`` holds one message per restart.
    """

    category = "fit_failure"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("all restarts failed:\n  " + "\n  ".join(self.diagnostics))


class ConfigError(HierHMMError, ValueError):
    category = "config"


class SchemaError(HierHMMError, ValueError):
    category = "schema"


class DataValidationError(HierHMMError, ValueError):
    category = "data_validation"
