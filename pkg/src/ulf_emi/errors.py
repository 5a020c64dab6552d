"""Exception hierarchy shared by all modules."""


class UlfEmiError(Exception):
    """Base class for every error raised by the package."""


class InvalidSpecError(UlfEmiError, ValueError):
    """A geometry, cavity or incidence description violates its invariants."""


class InvalidInputError(UlfEmiError, ValueError):
    """Array inputs with the wrong shape, dtype or contents."""


class SingularityError(UlfEmiError):
    """Field evaluated on (or too close to) a current-carrying segment."""


class OverlapError(SingularityError):
    """Two windings occupy the same place; their mutual flux is singular."""


class OutOfDomainError(UlfEmiError, ValueError):
    """A sample point or integration surface leaves the region where data exists."""


class ModelInvalidError(UlfEmiError):
    """Parameters put the closed-form cavity model outside its validity range."""


class DegenerateNormalizationError(UlfEmiError, ZeroDivisionError):
    """An external reference reading was zero, so drift cannot be normalized out."""


class UncancelableError(UlfEmiError, ZeroDivisionError):
    """The cancellation winding produces no flux in the target coil."""


class DegenerateError(UlfEmiError, ValueError):
    """A statistic needed as a divisor (noise sigma, ROI spread) is zero."""


class PolicyError(UlfEmiError, ValueError):
    """Invalid periphery-selection policy."""


class CoverageError(UlfEmiError, ValueError):
    """The interference timeline does not cover every readout window."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ProvenanceError(UlfEmiError):
    """A drive and a channel set were computed against different cavity fields."""


class ConfigError(UlfEmiError, ValueError):
    """Scenario configuration failed schema validation."""


class DegenerateBandWarning(UserWarning):
    """All reference channels carry zero energy in a frequency band."""
