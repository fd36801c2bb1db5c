"""Exception types shared across the package."""


class TomographyError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(TomographyError):
    """Input violates a documented precondition (bad matrix, bad state, bad file)."""


class DegenerateSpectrumError(ValidationError):
    """Two transition frequencies coincide; the generic six-frequency analysis does not apply."""

    def __init__(self, pair_a, pair_b, value):
        self.pair_a = pair_a
        self.pair_b = pair_b
        self.value = value
        super().__init__(
            f"transition frequencies for level pairs {pair_a} and {pair_b} "
            f"coincide near {value:.6g}; system is not generic"
        )


class DegenerateBasisError(TomographyError):
    """The trigonometric basis is numerically singular for the given frequencies and grid."""


class IdentificationError(TomographyError):
    """No candidate level arrangement fits the observed frequencies."""


class AmbiguousArrangementError(IdentificationError):
    """Two level arrangements fit the observed frequencies almost equally well."""


class SimulationError(TomographyError):
    """Internal inconsistency while simulating measurement data."""


class BalanceError(TomographyError):
    """No evolution time produces a usably balanced superposition from |1>."""
