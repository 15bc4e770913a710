"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A physical or numerical parameter is out of its allowed range."""


class StateValidityError(ValueError):
    """A density matrix violates Hermiticity, trace or positivity bounds."""


class IntegrationError(RuntimeError):
    """The ODE solver could not advance (step-size underflow or step budget)."""

    def __init__(self, message, t_last):
        super().__init__(f"{message} (last good t = {t_last:.6g} us)")
        self.t_last = t_last


class ConvergenceError(RuntimeError):
    """An iterative solve did not reach its tolerance."""


class FeatureNotFoundError(ValueError):
    """No transparency peak could be located in a spectrum."""


class IllPosedFeatureError(ValueError):
    """A transparency peak exists but its flanks run off the sampled grid."""


class IllPosedProblemError(ValueError):
    """A fit problem cannot determine its parameters (e.g. constant data)."""
