"""Exception hierarchy shared by the numerics library and the CLI."""


class DecouplingError(Exception):
    """Base class for every error raised by pdbench."""


class LayoutError(DecouplingError, ValueError):
    """Subsystem labels or dimensions do not fit together."""


class HermiticityError(DecouplingError, ValueError):
    pass


class PositivityError(DecouplingError, ValueError):
    """An operator that must be positive semidefinite is not."""


class NotCompletelyPositiveError(PositivityError):
    pass


class NormalizationError(DecouplingError, ValueError):
    pass


class SingularConditionerError(DecouplingError, ValueError):
    """A conditioning state is not full rank where an inverse power is needed."""


class BlockIndexError(DecouplingError, IndexError):
    pass


class DecompositionError(DecouplingError, ValueError):
    """A decomposition literal is malformed or a CC1-only operation got another shape."""


class EnvironmentTooSmallError(DecouplingError, ValueError):
    pass


class PreconditionError(DecouplingError, ValueError):
    pass


class EntropyConvergenceError(DecouplingError, RuntimeError):
    """The min-entropy SDP failed or its certified gap exceeds the tolerance."""

    def __init__(self, message: str, gap: float | None = None):
        super().__init__(message)
        self.gap = gap


class ConfigError(DecouplingError, ValueError):
    """Experiment or suite configuration failed validation."""


class ReportNotFoundError(DecouplingError, FileNotFoundError):
    pass
