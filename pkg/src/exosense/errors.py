"""Exception hierarchy shared across the package."""


class ExosenseError(Exception):
    """Base class for all package errors."""


class ContractError(ExosenseError, ValueError):
    """A precondition of an operation was violated."""


class RangeError(ContractError):
    """A requested time window falls outside a series' extent."""


class DesignError(ContractError):
    """Filter design parameters are invalid (e.g. cutoff at or above Nyquist)."""


class BundleError(ExosenseError):
    """A session bundle on disk could not be parsed."""


class ManifestError(BundleError):
    pass


class MissingStreamError(BundleError):
    pass


class ChecksumError(BundleError):
    pass


class NonFiniteError(BundleError):
    pass


class PhaseUnavailable(ExosenseError):
    """Too few heel strikes have been detected to estimate gait phase."""


class ShapeError(ContractError):
    """Tensor or weight shapes are incompatible."""


class GradientError(ExosenseError):
    """A non-finite gradient was produced during backward."""


class TrainingError(ExosenseError):
    """Training diverged (non-finite loss)."""


class WeightsFormatError(ExosenseError):
    """A weights file is truncated, has a bad magic, or an unsupported version."""


class PacketError(ExosenseError, ValueError):
    """A status packet could not be decoded."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ConfigurationError(ExosenseError):
    """The runtime pipeline or CLI was configured inconsistently."""
