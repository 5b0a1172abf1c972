"""Rigid transforms, the pinhole camera, and base ego-motion.

Frame conventions
-----------------
* Robot base frame: z up, x forward, y left. A positive yaw ``dtheta`` is a
  counterclockwise rotation about +z seen from above.
* Camera frame: +z along the optical axis, +x right, +y down, so that
  ``u = fx * X / Z + cx`` and ``v = fy * Y / Z + cy`` with no axis flips.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError


def _frozen(a, shape):
    arr = np.array(a, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w):
    """Rotation matrix for the rotation vector ``w`` (Rodrigues)."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (math.sin(theta) / theta) * K
        + ((1.0 - math.cos(theta)) / theta**2) * (K @ K)
    )


def so3_log(R):
    """Rotation vector (axis * angle) of a rotation matrix, angle in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    cos_theta = (R[0, 0] + R[1, 1] + R[2, 2] - 1.0) * 0.5
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_theta = 0.5 * float(np.linalg.norm(vee))
    theta = math.atan2(sin_theta, cos_theta)
    if theta < 1e-6:
        # first-order series of theta / (2 sin theta)
        return 0.5 * (1.0 + theta**2 / 6.0) * vee
    if math.pi - theta > 1e-4:
        return theta / (2.0 * sin_theta) * vee
    # near pi the antisymmetric part vanishes; read the axis off the
    # symmetric part, (R + R^T) / 2 = cos(theta) I + (1 - cos(theta)) a a^T
    aat = (0.5 * (R + R.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    k = int(np.argmax(np.diag(aat)))
    axis = aat[:, k] / math.sqrt(max(aat[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if np.dot(axis, vee) < 0:
        axis = -axis
    return theta * axis


def rotation_angle(R):
    """Magnitude of the rotation encoded by ``R`` (radians)."""
    return float(np.linalg.norm(so3_log(R)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """An element of SE(3): ``x -> rotation @ x + translation``.

    Instances are immutable; the arrays are read-only. ``A @ B`` composes
    (apply ``B`` first), ``A.inverse()`` inverts, ``A.apply(points)`` maps
    an ``(..., 3)`` array of points.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=np.float64)
        if M.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {M.shape}")
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_translation(cls, xyz):
        return cls(np.eye(3), xyz)

    @classmethod
    def from_rotvec(cls, w, translation=(0.0, 0.0, 0.0)):
        return cls(so3_exp(w), translation)

    @classmethod
    def rot_z(cls, angle):
        c, s = math.cos(angle), math.sin(angle)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))

    @classmethod
    def from_rpy(cls, rpy, xyz=(0.0, 0.0, 0.0)):
        """URDF convention: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
        r, p, y = rpy
        cr, sr = math.cos(r), math.sin(r)
        cp, sp = math.cos(p), math.sin(p)
        cy, sy = math.cos(y), math.sin(y)
        Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        return cls(Rz @ Ry @ Rx, xyz)

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def compose(self, other):
        return self @ other

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_vector(self, vectors):
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def orthonormalized(self):
        """Project the rotation back onto SO(3) (polar decomposition)."""
        U, _, Vt = np.linalg.svd(self.rotation)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] = -U[:, -1]
            R = U @ Vt
        return RigidTransform(R, self.translation)

    def allclose(self, other, atol=1e-9):
        return np.allclose(self.rotation, other.rotation, atol=atol, rtol=0) and np.allclose(
            self.translation, other.translation, atol=atol, rtol=0
        )

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"RigidTransform(rotvec={so3_log(self.rotation).round(6)}, t={self.translation.round(6)})"


def pose_error(target, current):
    """Position and orientation error between two poses.

    Returns ``(dp, dw)`` where ``dp = t_target - t_current`` (meters) and
    ``dw`` is the rotation vector of ``R_target @ R_current.T`` (radians).
    """
    dp = target.translation - current.translation
    dw = so3_log(target.rotation @ current.rotation.T)
    return dp, dw


@dataclass(frozen=True)
class EgoMotion:
    """Planar base displacement: translation (m) and yaw about +z (rad)."""

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0

    def __post_init__(self):
        for name in ("dx", "dy", "dtheta"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"ego motion {name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_degrees(cls, dx, dy, dtheta_deg):
        return cls(dx, dy, math.radians(dtheta_deg))

    @property
    def dtheta_deg(self):
        return math.degrees(self.dtheta)

    def is_zero(self):
        return self.dx == 0.0 and self.dy == 0.0 and self.dtheta == 0.0

    def to_dict(self):
        return {"dx": self.dx, "dy": self.dy, "dtheta": self.dtheta}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dx"], d["dy"], d["dtheta"])


def ego_motion_to_base_transform(motion):
    """Change of coordinates from the old base frame to the displaced one.

    The new base pose seen from the old base is
    ``D = Trans(dx, dy, 0) @ Rot_z(dtheta)``; the returned transform is
    ``D^-1``, so old-frame coordinates ``p`` become ``T_v.apply(p)``.
    """
    D = RigidTransform.from_translation((motion.dx, motion.dy, 0.0)) @ RigidTransform.rot_z(
        motion.dtheta
    )
    return D.inverse()


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera rigidly attached to the robot base.

    ``extrinsic`` maps base-frame points into the camera frame
    (``T_cam<-base``). Stored depth values are multiplied by
    ``depth_scale`` (meters per stored unit) to get meters; the calibration
    file carries the same quantity in millimeters per unit.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform = field(default_factory=RigidTransform)
    depth_unit_mm: float = 1.0
    depth_max: float = 3.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("fx and fy must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not (self.depth_unit_mm > 0 and self.depth_max > 0):
            raise ValueError("depth scale and depth_max must be positive")

    @property
    def depth_scale(self):
        return self.depth_unit_mm / 1000.0

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self):
        return (self.height, self.width)

    def project(self, points):
        """Continuous pixel coordinates ``(u, v)`` of camera-frame points."""
        points = np.asarray(points, dtype=np.float64)
        X, Y, Z = points[..., 0], points[..., 1], points[..., 2]
        return self.fx * X / Z + self.cx, self.fy * Y / Z + self.cy

    def with_resolution(self, width, height):
        sx, sy = width / self.width, height / self.height
        return CameraModel(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height,
            self.extrinsic, self.depth_unit_mm, self.depth_max,
        )

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "depth_scale_mm_per_unit": self.depth_unit_mm,
            "depth_max_m": self.depth_max,
            "extrinsic": self.extrinsic.as_matrix().tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        missing = [
            k
            for k in ("fx", "fy", "cx", "cy", "width", "height", "depth_scale_mm_per_unit", "depth_max_m", "extrinsic")
            if k not in d
        ]
        if missing:
            raise SchemaError(f"calibration is missing keys: {', '.join(missing)}")
        M = np.array(d["extrinsic"], dtype=np.float64)
        if M.shape != (4, 4):
            raise SchemaError(f"extrinsic must be a 4x4 row-major matrix, got shape {M.shape}")
        try:
            return cls(
                float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                int(d["width"]), int(d["height"]), RigidTransform.from_matrix(M),
                float(d["depth_scale_mm_per_unit"]), float(d["depth_max_m"]),
            )
        except ValueError as exc:
            raise SchemaError(f"invalid calibration: {exc}") from exc

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def save_calibration(camera, path):
    Path(path).write_text(json.dumps(camera.to_dict(), indent=2) + "\n")


def load_calibration(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing calibration file {path}")
    try:
        return CameraModel.from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def camera_relative_transform(camera, motion):
    """``T_0->1``: source-camera coordinates to novel-view camera coordinates."""
    E = camera.extrinsic
    return E @ ego_motion_to_base_transform(motion) @ E.inverse()


@dataclass(frozen=True)
class ViewpointRange:
    """Closed sampling intervals for ego motion (meters, meters, radians)."""

    dx_range: tuple = (0.0, 0.0)
    dy_range: tuple = (0.0, 0.0)
    dtheta_range: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("dx_range", "dy_range", "dtheta_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo <= hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (lo, hi))

    @classmethod
    def from_degrees(cls, dx_range, dy_range, dtheta_range_deg):
        lo, hi = dtheta_range_deg
        return cls(dx_range, dy_range, (math.radians(lo), math.radians(hi)))

    def contains(self, motion):
        return (
            self.dx_range[0] <= motion.dx <= self.dx_range[1]
            and self.dy_range[0] <= motion.dy <= self.dy_range[1]
            and self.dtheta_range[0] <= motion.dtheta <= self.dtheta_range[1]
        )


def sample_ego_motion(viewpoint_range, seed):
    """Uniform sample of each motion component; fixed seed, fixed output."""
    rng = np.random.default_rng(seed)
    out = []
    for lo, hi in (viewpoint_range.dx_range, viewpoint_range.dy_range, viewpoint_range.dtheta_range):
        out.append(min(hi, lo + (hi - lo) * rng.random()))
    return EgoMotion(*out)


# Viewpoint ranges used for demonstration generation. The real robot cannot
# drive forward, so its dx range stops at zero; training-pair synthesis for
# the real profile samples the full symmetric range.
VIEWPOINT_RANGES = {
    "sim": ViewpointRange.from_degrees((-0.1, 0.1), (-0.1, 0.1), (-10.0, 10.0)),
    "real": ViewpointRange.from_degrees((-0.1, 0.0), (-0.1, 0.1), (-10.0, 10.0)),
    "real-pairs": ViewpointRange.from_degrees((-0.1, 0.1), (-0.1, 0.1), (-10.0, 10.0)),
    "zero": ViewpointRange(),
}


def look_at_extrinsic(position, pitch_down_deg, yaw_deg=0.0):
    """``T_cam<-base`` for a camera at ``position`` looking along base +x,
    pitched down by ``pitch_down_deg`` and then yawed by ``yaw_deg``."""
    p = math.radians(pitch_down_deg)
    z_cam = np.array([math.cos(p), 0.0, -math.sin(p)])
    x_cam = np.array([0.0, -1.0, 0.0])
    y_cam = np.cross(z_cam, x_cam)
    R_base_cam = np.column_stack([x_cam, y_cam, z_cam])
    cam_in_base = RigidTransform.rot_z(math.radians(yaw_deg)) @ RigidTransform(R_base_cam, position)
    return cam_in_base.inverse()


def _profile_camera(width, height, fov_y_deg):
    fy = (height / 2.0) / math.tan(math.radians(fov_y_deg) / 2.0)
    return CameraModel(
        fx=fy, fy=fy, cx=width / 2.0, cy=height / 2.0, width=width, height=height,
        extrinsic=look_at_extrinsic((-0.12, 0.0, 0.62), 38.0),
        depth_unit_mm=1.0, depth_max=3.0,
    )


def profile_camera(name):
    """Head camera for a named profile: ``sim`` (240x320) or ``real`` (480x640)."""
    if name == "sim":
        return _profile_camera(320, 240, 37.0)
    if name in ("real", "real-pairs"):
        return _profile_camera(640, 480, 42.0)
    raise KeyError(f"unknown profile {name!r}")
