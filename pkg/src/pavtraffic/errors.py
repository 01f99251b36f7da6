"""Exception hierarchy.

Validation problems (bad parameters, malformed input files, states off the
simplex) derive from :class:`ValidationError`; failures of a numerical
procedure on otherwise valid input derive from :class:`NumericalError`.
The CLI maps the two families to exit codes 1 and 2.
"""


class ValidationError(ValueError):
    pass


class SimplexError(ValidationError):
    """A state vector has negative entries or does not sum to one."""


class AnalysisCapError(ValidationError):
    """Dense analysis requested for a stage count above the cap."""


class NumericalError(RuntimeError):
    pass


class StepSizeError(NumericalError):
    """Integration step outside the RK4 stability guard, or undershoot."""

    def __init__(self, message, time=None):
        if time is not None:
            message = f"{message} (t={time:.6g} s)"
        super().__init__(message)
        self.time = time


class ConvergenceError(NumericalError):
    def __init__(self, message, best_residual=None, best_state=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_state = best_state
