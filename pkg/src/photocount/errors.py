"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A mode, kernel, or run configuration is invalid."""


class PhysicalityError(ValueError):
    """A state violates a quantum bound (Cauchy-Schwarz, uncertainty)."""


class AlignmentError(ValueError):
    """Streams or accumulators that must line up do not."""


class ProvenanceError(ValueError):
    """Accumulators or cumulants built from different kernels were combined."""
