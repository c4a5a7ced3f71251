"""Broadband microwave photon counting from sampled voltage traces."""
from .errors import AlignmentError, ConfigurationError, PhysicalityError, ProvenanceError

__version__ = "0.1.0"

__all__ = ["AlignmentError", "ConfigurationError", "PhysicalityError", "ProvenanceError", "__version__"]
