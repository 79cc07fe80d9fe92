"""Exception types. Each maps to a CLI exit code."""


class PKMError(Exception):
    exit_code = 1


class ValidationError(PKMError, ValueError):
    """Malformed model, topology or input."""
    exit_code = 2


class SingularityError(PKMError, ArithmeticError):
    """Kinematic, partition or chart singularity."""
    exit_code = 3

    def __init__(self, msg, cond=None, t=None):
        super().__init__(msg)
        self.cond = cond
        self.t = t


class DivergenceError(PKMError, ArithmeticError):
    """Newton iteration or integration failed to converge."""
    exit_code = 4
