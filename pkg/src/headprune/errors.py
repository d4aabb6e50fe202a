"""Exception types shared across the package."""


class HeadpruneError(Exception):
    """Base class for all package errors."""


class ShapeError(HeadpruneError):
    """Tensor dimensions are incompatible with the requested operation."""


class ContractError(HeadpruneError):
    """A caller violated an operation's precondition."""


class NumericsError(HeadpruneError):
    """An iterative numeric routine failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MisalignmentError(HeadpruneError):
    """Heads of one layer keep unequal channel counts; compaction would mix subspaces."""


class FormatError(HeadpruneError):
    """A serialized file is malformed, truncated, or fails its checksum."""


class ConfigError(HeadpruneError):
    """A run configuration is invalid or contains unknown fields."""


class EquivalenceError(HeadpruneError):
    """Masked and compacted models disagree beyond tolerance."""
