"""Exception types raised across the package."""


class PartPhaseError(Exception):
    pass


class ConfigError(PartPhaseError, ValueError):
    """Unknown scheme, missing mapping or otherwise invalid configuration."""


class StructureError(PartPhaseError, ValueError):
    """Skeleton or motion data is structurally inconsistent."""


class BVHParseError(StructureError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(PartPhaseError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ShapeError(PartPhaseError, ValueError):
    pass


class TrainingError(PartPhaseError, RuntimeError):
    """Divergence, NaN losses, stage-order or freeze violations during training."""


class CheckpointError(PartPhaseError, IOError):
    pass


class RuntimeFault(PartPhaseError, RuntimeError):
    """Non-finite values produced during inference."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)
