"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the model is defined."""


class EvaluationError(ArithmeticError):
    """A rate expression produced a non-finite value."""


class DegenerateKineticsError(ValueError):
    """The two species have indistinguishable kinetics (kappa vanishes)."""


class UnsupportedModelError(TypeError):
    """An operation that needs Monod kinetics got something else."""


class WashoutError(ValueError):
    """No positive equilibrium exists for the requested operating point."""


class IntegrationDomainError(RuntimeError):
    """The numerical state left the invariant set by more than the tolerance."""

    def __init__(self, t, message):
        super().__init__(f"t={t!r}: {message}")
        self.t = t


class SingularGramError(ArithmeticError):
    """The observer Gram matrix is numerically singular over a window."""

    def __init__(self, record, message="Gram matrix is singular"):
        super().__init__(f"{message} (det_normalized={record.det_normalized:.3e})")
        self.record = record
