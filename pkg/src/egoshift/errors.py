"""Exception hierarchy shared by the library and the CLI.

The CLI maps each family to an exit code: data/schema problems exit 3,
numerical failures exit 4.
"""


class EgoShiftError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class SchemaError(EgoShiftError):
    """Malformed or inconsistent input data (files, layouts, lengths)."""

    exit_code = 3


class RobotModelError(SchemaError):
    """Invalid robot description (URDF subset or robot config)."""


class JointLimitError(EgoShiftError, ValueError):
    """A joint value lies outside the model's limits."""

    exit_code = 3

    def __init__(self, joint, value, lower, upper, frame=None):
        self.joint = joint
        self.value = value
        self.lower = lower
        self.upper = upper
        self.frame = frame
        where = f" at frame {frame}" if frame is not None else ""
        super().__init__(
            f"joint {joint!r}{where}: value {value!r} outside [{lower!r}, {upper!r}]"
        )


class DimensionError(EgoShiftError, ValueError):
    """Arrays whose shapes should agree do not."""

    exit_code = 3


class NumericalError(EgoShiftError):
    """A numerical procedure could not produce a usable result."""

    exit_code = 4


class RetargetError(NumericalError):
    """Too many frames failed inverse kinematics; carries the report."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class ShortfallError(SchemaError):
    """Not enough generated episodes to realize a mixing ratio."""

    def __init__(self, needed, available):
        self.needed = needed
        self.available = available
        super().__init__(
            f"ratio needs {needed} generated episodes, only {available} available "
            f"(shortfall {needed - available})"
        )
