"""Exception hierarchy shared by all subpackages."""


class NuhflowsError(Exception):
    """Base class for every error raised by the package."""


# billiards
class GrazingError(NuhflowsError):
    """A collision with |cos(phi)| below the grazing tolerance."""

    def __init__(self, msg="", segment=None):
        super().__init__(msg)
        self.segment = segment


class CapExceeded(NuhflowsError):
    """No collision (or no return to the section) within the configured cap."""


class UnsupportedVariant(NuhflowsError):
    pass


class InvalidTable(NuhflowsError):
    pass


# Gibbs-Markov / transfer operators
class BadParams(NuhflowsError):
    pass


class TruncationTooCoarse(NuhflowsError):
    pass


class NoGap(NuhflowsError):
    """Two leading eigenvalues are numerically indistinguishable in modulus."""


class EmptySubsystem(NuhflowsError):
    pass


# suspension flows
class NoConvergence(NuhflowsError):
    pass


class InducePowerNeeded(NuhflowsError):
    """inf(roof) < 4|chi|_inf + 1; the base map must be replaced by a power."""


class DegenerateRange(NuhflowsError):
    pass


class PrecisionExhausted(NuhflowsError):
    pass


class FitDiverged(NuhflowsError):
    pass


# estimators
class BudgetTooSmall(NuhflowsError):
    pass


class EmptyWindow(NuhflowsError):
    pass


class NoiseDominated(NuhflowsError):
    pass


class GridMismatch(NuhflowsError):
    pass


class SeriesNotDecaying(NuhflowsError):
    pass


class ConfigInvalid(NuhflowsError):
    pass
