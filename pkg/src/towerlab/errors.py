"""Exception types shared across the laboratory modules."""


class TowerLabError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(TowerLabError):
    """A config value or operation precondition is out of contract."""


class DerivativeUndefined(TowerLabError):
    """Derivative requested at an interior branch junction with mismatched one-sided slopes."""


class NonConvergent(TowerLabError):
    """An iterative estimate (splitting frame, stable leaf) did not settle below tolerance."""


class ConstructionFailed(TowerLabError):
    """Perturbed-map verification failed; ``failures`` lists (item, where, value)."""

    def __init__(self, failures):
        self.failures = list(failures)
        detail = "; ".join(f"item {it}: {msg}" for it, msg in self.failures)
        super().__init__(f"construction checks failed: {detail}")


class NotHyperbolicTime(TowerLabError):
    """Pre-ball requested at an iterate that is not a hyperbolic time for the base point."""


class ResolutionExceeded(TowerLabError):
    """Adaptive polyline refinement hit the sample cap before meeting the gap bound."""


class InsufficientTail(TowerLabError):
    """Fewer than the required number of usable points for a tail fit."""


class SearchFailed(TowerLabError):
    """Reference-setup search exhausted its grid; ``diagnostics`` records the blocker."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class NoCrossing(TowerLabError):
    """No iterate up to the crossing cap produced a u-crossing for a candidate base point."""


class DegenerateBand(TowerLabError):
    """Deviation band epsilon exceeds the observable's oscillation around its mean."""


class MissingArtifacts(TowerLabError):
    """Report requested over a directory without the expected run artifacts."""


class StallAbort(TowerLabError):
    """Partition build made no acceptance for too many consecutive steps."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
