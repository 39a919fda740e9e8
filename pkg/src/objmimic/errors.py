"""Exception types shared across the package."""


class FrameMismatchError(ValueError):
    """Composed poses disagree about the frame they meet in."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DimensionError(ValueError):
    """A vector has the wrong length for the model it is used with."""


class ModelError(ValueError):
    """A kinematic model document is malformed or violates tree invariants."""


class TaskError(ValueError):
    """An IK task references a frame the model does not define."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class ParseError(ValueError):
    """An input file violates its schema."""


class ConsistencyError(ValueError):
    """Mutually dependent inputs disagree (e.g. frame counts)."""


class GapError(ValueError):
    """A keypoint track is fully occluded over a whole smoothing window."""

    def __init__(self, object_name: str, frames: list[int]):
        self.object_name = object_name
        self.frames = frames
        super().__init__(
            f"object '{object_name}' has no visible keypoints around frames {frames}"
        )


class ConfigError(ValueError):
    """An option or template name is unknown."""


class LocalizationError(ValueError):
    """A plan references an object the scene observation does not contain."""

    def __init__(self, object_name: str):
        self.object_name = object_name
        super().__init__(f"object '{object_name}' not found in scene observation")


class DegenerateTrajectoryError(ValueError):
    """Trajectory start and end coincide; warp requires a pure-offset fallback
    (equal start/end transforms) which the given spec does not satisfy."""


class InfeasibleLayoutError(RuntimeError):
    """Rejection sampling could not place objects with the required separation."""


class EmptyDatasetError(ValueError):
    """Dataset export was asked to write zero successful episodes."""


class ProviderError(RuntimeError):
    """A semantic-relation provider failed or timed out."""
