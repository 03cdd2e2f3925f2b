"""Exception types raised by the engine, one per failure category."""


class GrowPruneError(Exception):
    """Base class for all engine errors."""


class DimensionError(GrowPruneError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(GrowPruneError):
    """A non-finite value (NaN/Inf) appeared in a forward or backward pass."""


class ArchitectureError(GrowPruneError):
    """Adjacent layers are shape-incompatible or a LayerSpec is malformed."""


class GrowthError(GrowPruneError):
    """A layer insertion is impossible (e.g. identity init of a non-square layer)."""


class PruneError(GrowPruneError):
    """A prune request would empty a layer or targets a non-prunable layer."""


class PersistenceError(GrowPruneError):
    """Checkpoint file is corrupt, truncated, or of an unknown version."""


class FormatError(GrowPruneError):
    """A dataset file does not match its published binary layout."""


class ConfigError(GrowPruneError):
    """Run configuration failed validation; message lists every problem."""


class VerificationError(GrowPruneError):
    """Winning-ticket verification cannot run (e.g. missing initial weights)."""
