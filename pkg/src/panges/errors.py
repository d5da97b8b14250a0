"""Exception types shared across the package."""
from __future__ import annotations


class DimensionMismatch(ValueError):
    """Two masks (or a mask and a map) with different pixel grids were combined."""


class RleError(ValueError):
    """A run-length encoding violates the canonical-form or length contract."""


class AnnotationError(ValueError):
    """An annotation document is structurally valid JSON but semantically broken."""


class GenerationError(RuntimeError):
    """Synthetic data could not be generated under the requested configuration."""


class ProtocolError(RuntimeError):
    """A worker endpoint sent a malformed or out-of-contract message."""


class WorkerError(RuntimeError):
    """A worker endpoint died, hung, or failed to hand-shake."""


class PipelineError(RuntimeError):
    """An internal pipeline invariant was violated; aborting is the only safe move."""
