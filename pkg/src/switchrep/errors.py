"""Exception types raised across the package."""


class InvalidParams(ValueError):
    """Game or schedule parameters violate their constraints."""


class DegenerateSchedule(ValueError):
    """A threshold query has no solution (equal coefficients)."""


class SingularState(ValueError):
    """A pair-approximation quantity is undefined at this state."""


class StepTooLarge(RuntimeError):
    """An integrator step moved a component by more than the allowed amount."""


class InvalidDegreeSequence(ValueError):
    pass


class GenerationFailed(RuntimeError):
    pass


class NegativeFitness(ValueError):
    """Imitation weights would be negative for the given selection strength."""
