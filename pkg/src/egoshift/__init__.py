"""Novel egocentric viewpoint demonstrations from a single RGB-D robot demo."""

from .errors import (
    DimensionError,
    EgoShiftError,
    JointLimitError,
    NumericalError,
    RetargetError,
    RobotModelError,
    SchemaError,
    ShortfallError,
)
from .geometry import CameraModel, EgoMotion, RigidTransform, ViewpointRange, camera_relative_transform
from .kinematics import JointTrajectory, RobotModel, forward_kinematics, load_robot_model, solve_ik

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "DimensionError",
    "EgoMotion",
    "EgoShiftError",
    "JointLimitError",
    "JointTrajectory",
    "NumericalError",
    "RetargetError",
    "RigidTransform",
    "RobotModel",
    "RobotModelError",
    "SchemaError",
    "ShortfallError",
    "ViewpointRange",
    "camera_relative_transform",
    "forward_kinematics",
    "load_robot_model",
    "solve_ik",
]
