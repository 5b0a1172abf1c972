"""Robot models, forward kinematics and damped least-squares IK.

A robot is described by a URDF subset (links with mesh visuals, revolute /
prismatic / fixed joints with limits) plus a small JSON robot config that
names the base link and, per arm, the mount link, the end-effector link, the
actuated joints and the gripper joints. Trajectory rows are laid out arm by
arm as ``[arm joints..., gripper]``; with two 6-joint arms that is the usual
14-channel ``[L6, Lg, R6, Rg]`` layout.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from xml.parsers import expat

import numpy as np

from .errors import JointLimitError, RobotModelError, SchemaError
from .geometry import RigidTransform, pose_error, skew, so3_log

log = logging.getLogger(__name__)

JOINT_TYPES = ("revolute", "prismatic", "fixed")
LIMIT_SLACK = 1e-9


# ---------------------------------------------------------------------------
# model description


@dataclass(frozen=True)
class Visual:
    mesh: Path
    origin: RigidTransform
    scale: tuple = (1.0, 1.0, 1.0)
    color: tuple = (0.6, 0.6, 0.6, 1.0)


@dataclass(frozen=True)
class Link:
    name: str
    visuals: tuple = ()


@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    parent: str
    child: str
    origin: RigidTransform
    axis: tuple = (0.0, 0.0, 1.0)
    lower: float = 0.0
    upper: float = 0.0

    def motion(self, q):
        """Transform contributed by the joint variable ``q``."""
        if self.type == "revolute":
            return RigidTransform(_axis_rotation(np.asarray(self.axis), q))
        if self.type == "prismatic":
            return RigidTransform.from_translation(np.asarray(self.axis) * q)
        return RigidTransform.identity()


@dataclass(frozen=True)
class ArmSpec:
    name: str
    mount_link: str
    ee_link: str
    joints: tuple
    gripper_joints: tuple = ()
    gripper_scale: float = 1.0


def _axis_rotation(axis, angle):
    K = skew(axis)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


class _ArmChain:
    """Precompiled serial chain from the base link to one end effector.

    Fixed joints along the path are folded into the origin of the next
    actuated joint so that FK is one 4x4 product per actuated joint.
    """

    def __init__(self, model, arm):
        path = model.path_to(arm.ee_link)
        mount_path = model.path_to(arm.mount_link)
        if path[: len(mount_path)] != mount_path:
            raise RobotModelError(
                f"arm {arm.name}: end effector {arm.ee_link!r} is not below mount {arm.mount_link!r}"
            )
        below = path[len(mount_path):]
        actuated = [j.name for j in below if j.type != "fixed"]
        if tuple(actuated) != tuple(arm.joints):
            raise RobotModelError(
                f"arm {arm.name}: joints {list(arm.joints)} do not form the chain "
                f"{actuated} from {arm.mount_link!r} to {arm.ee_link!r}"
            )
        self.name = arm.name
        self.mount = RigidTransform.identity()
        for j in mount_path:
            self.mount = self.mount @ j.origin
        origins, axes, prismatic = [], [], []
        pending = self.mount.as_matrix()
        for j in below:
            pending = pending @ j.origin.as_matrix()
            if j.type == "fixed":
                continue
            origins.append(pending)
            axis = np.asarray(j.axis, dtype=np.float64)
            axes.append(axis)
            prismatic.append(j.type == "prismatic")
            pending = np.eye(4)
        self.tail = pending
        self.origins = origins
        self.axes = axes
        self.K = [skew(a) for a in axes]
        self.K2 = [k @ k for k in self.K]
        self.prismatic = prismatic
        joints = [model.joints[n] for n in arm.joints]
        self.names = tuple(arm.joints)
        self.lower = np.array([j.lower for j in joints])
        self.upper = np.array([j.upper for j in joints])
        self.n = len(joints)
        # Upper bound on the distance from the first joint to the end effector.
        reach = float(np.linalg.norm(self.tail[:3, 3]))
        for i in range(1, self.n):
            reach += float(np.linalg.norm(origins[i][:3, 3]))
        for i, pr in enumerate(prismatic):
            if pr:
                reach += max(abs(self.lower[i]), abs(self.upper[i]))
        self.reach = reach

    def frames(self, q):
        """World (base-frame) joint frames before motion, and the EE matrix."""
        T = np.eye(4)
        joint_frames = []
        for i in range(self.n):
            T = T @ self.origins[i]
            joint_frames.append(T)
            M = np.eye(4)
            if self.prismatic[i]:
                M[:3, 3] = self.axes[i] * q[i]
            else:
                M[:3, :3] += math.sin(q[i]) * self.K[i] + (1.0 - math.cos(q[i])) * self.K2[i]
            T = T @ M
        return joint_frames, T @ self.tail

    def fk(self, q):
        return self.frames(q)[1]

    def jacobian(self, q):
        """Geometric Jacobian (6 x n): rows [linear velocity; angular velocity]."""
        joint_frames, ee = self.frames(q)
        p_e = ee[:3, 3]
        J = np.zeros((6, self.n))
        for i, F in enumerate(joint_frames):
            a = F[:3, :3] @ self.axes[i]
            if self.prismatic[i]:
                J[:3, i] = a
            else:
                J[:3, i] = np.cross(a, p_e - F[:3, 3])
                J[3:, i] = a
        return J, ee


@dataclass(eq=False)
class RobotModel:
    """Kinematic tree plus per-arm chain descriptions. Treat as immutable."""

    name: str
    base_link: str
    links: dict
    joints: dict
    arms: dict = field(default_factory=dict)
    source: Path | None = None

    def __post_init__(self):
        self._parent_joint = {j.child: j for j in self.joints.values()}
        self._chains = {name: _ArmChain(self, arm) for name, arm in self.arms.items()}

    # -- structure ---------------------------------------------------------
    def path_to(self, link):
        """Joints from the base link down to ``link`` (root first)."""
        if link not in self.links:
            raise RobotModelError(f"unknown link {link!r}")
        path = []
        while link != self.base_link:
            j = self._parent_joint.get(link)
            if j is None:
                raise RobotModelError(f"link {link!r} is not connected to base {self.base_link!r}")
            path.append(j)
            link = j.parent
        return path[::-1]

    def chain(self, arm):
        try:
            return self._chains[arm]
        except KeyError:
            raise KeyError(f"robot {self.name!r} has no arm {arm!r}") from None

    @property
    def arm_order(self):
        return tuple(self.arms)

    def channel_layout(self):
        """``{arm: (joint slice, gripper column)}`` for trajectory rows."""
        layout, col = {}, 0
        for name in self.arm_order:
            n = len(self.arms[name].joints)
            layout[name] = (slice(col, col + n), col + n)
            col += n + 1
        return layout

    @property
    def n_channels(self):
        return sum(len(a.joints) + 1 for a in self.arms.values())

    def arm_limits(self, arm):
        c = self.chain(arm)
        return c.lower.copy(), c.upper.copy()

    def check_limits(self, arm, q, frame=None):
        c = self.chain(arm)
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (c.n,):
            raise ValueError(f"arm {arm}: expected {c.n} joint values, got shape {q.shape}")
        bad = np.flatnonzero((q < c.lower - LIMIT_SLACK) | (q > c.upper + LIMIT_SLACK) | ~np.isfinite(q))
        if bad.size:
            i = int(bad[0])
            raise JointLimitError(c.names[i], float(q[i]), float(c.lower[i]), float(c.upper[i]), frame)


# ---------------------------------------------------------------------------
# URDF subset parsing

_IGNORED_ELEMENTS = {"transmission", "gazebo", "ros2_control"}


def _parse_xml_with_lines(text, where):
    """ElementTree parse that remembers each element's source line."""
    builder = ET.TreeBuilder()
    lines = {}
    parser = expat.ParserCreate()

    def start(tag, attrs):
        el = builder.start(tag, attrs)
        lines[el] = parser.CurrentLineNumber

    parser.StartElementHandler = start
    parser.EndElementHandler = builder.end
    parser.CharacterDataHandler = builder.data
    try:
        parser.Parse(text, True)
    except expat.ExpatError as exc:
        raise RobotModelError(f"{where}: XML parse error at line {exc.lineno}: {expat.ErrorString(exc.code)}") from exc
    return builder.close(), lines


def _floats(text, n, ctx):
    try:
        vals = tuple(float(v) for v in text.split())
    except ValueError:
        vals = ()
    if len(vals) != n:
        raise RobotModelError(f"{ctx}: expected {n} numbers, got {text!r}")
    return vals


def _origin(el, ctx):
    o = el.find("origin")
    if o is None:
        return RigidTransform.identity()
    xyz = _floats(o.get("xyz", "0 0 0"), 3, ctx)
    rpy = _floats(o.get("rpy", "0 0 0"), 3, ctx)
    return RigidTransform.from_rpy(rpy, xyz)


def _resolve_mesh(filename, base_dir):
    if filename.startswith("package://"):
        filename = filename[len("package://"):].split("/", 1)[-1]
    elif filename.startswith("file://"):
        filename = filename[len("file://"):]
    p = Path(filename)
    return p if p.is_absolute() else (base_dir / p)


def parse_urdf(text, base_dir=".", where="<urdf>"):
    """Parse a URDF-subset document into ``(name, links, joints)``."""
    base_dir = Path(base_dir)
    root, lines = _parse_xml_with_lines(text, where)
    if root.tag != "robot":
        raise RobotModelError(f"{where}: root element must be <robot>, got <{root.tag}>")

    def ctx(el, what):
        return f"{where}:{lines.get(el, '?')}: {what}"

    materials = {}
    for m in root.findall("material"):
        c = m.find("color")
        if c is not None and m.get("name"):
            materials[m.get("name")] = _floats(c.get("rgba", ""), 4, ctx(m, f"material {m.get('name')!r}"))

    links = {}
    for el in root:
        if el.tag in _IGNORED_ELEMENTS:
            log.warning("%s: ignoring unsupported element <%s>", where, el.tag)
    for el in root.findall("link"):
        name = el.get("name")
        if not name:
            raise RobotModelError(ctx(el, "link without a name"))
        if name in links:
            raise RobotModelError(ctx(el, f"duplicate link {name!r}"))
        visuals = []
        for v in el.findall("visual"):
            mesh = v.find("geometry/mesh")
            if mesh is None or not mesh.get("filename"):
                log.warning("%s: link %r visual without a mesh is ignored", where, name)
                continue
            scale = _floats(mesh.get("scale", "1 1 1"), 3, ctx(mesh, "mesh scale"))
            color = (0.6, 0.6, 0.6, 1.0)
            mat = v.find("material")
            if mat is not None:
                c = mat.find("color")
                if c is not None:
                    color = _floats(c.get("rgba", ""), 4, ctx(mat, "material color"))
                elif mat.get("name") in materials:
                    color = materials[mat.get("name")]
            visuals.append(Visual(_resolve_mesh(mesh.get("filename"), base_dir), _origin(v, ctx(v, "origin")), scale, color))
        links[name] = Link(name, tuple(visuals))

    joints = {}
    for el in root.findall("joint"):
        name = el.get("name")
        jtype = el.get("type")
        where_j = ctx(el, f"joint {name!r}")
        if not name:
            raise RobotModelError(ctx(el, "joint without a name"))
        if name in joints:
            raise RobotModelError(f"{where_j}: duplicate joint")
        if jtype not in JOINT_TYPES:
            raise RobotModelError(f"{where_j}: unsupported joint type {jtype!r}")
        parent, child = el.find("parent"), el.find("child")
        if parent is None or child is None:
            raise RobotModelError(f"{where_j}: missing <parent> or <child>")
        parent, child = parent.get("link"), child.get("link")
        for ref in (parent, child):
            if ref not in links:
                raise RobotModelError(f"{where_j}: dangling link reference {ref!r}")
        if el.find("mimic") is not None:
            log.warning("%s: mimic element ignored", where_j)
        axis = (1.0, 0.0, 0.0)
        lower = upper = 0.0
        if jtype != "fixed":
            a = el.find("axis")
            if a is not None:
                axis = _floats(a.get("xyz", "1 0 0"), 3, where_j + " axis")
            norm = math.sqrt(sum(x * x for x in axis))
            if norm == 0:
                raise RobotModelError(f"{where_j}: zero axis")
            axis = tuple(x / norm for x in axis)
            lim = el.find("limit")
            if lim is None or lim.get("lower") is None or lim.get("upper") is None:
                raise RobotModelError(f"{where_j}: actuated joint is missing <limit lower= upper=>")
            lower, upper = float(lim.get("lower")), float(lim.get("upper"))
            if not (math.isfinite(lower) and math.isfinite(upper) and lower < upper):
                raise RobotModelError(f"{where_j}: invalid limits [{lower}, {upper}]")
        joints[name] = Joint(name, jtype, parent, child, _origin(el, where_j), axis, lower, upper)

    _check_tree(links, joints, where)
    return root.get("name", "robot"), links, joints


def _check_tree(links, joints, where):
    parent_of = {}
    for j in joints.values():
        if j.child in parent_of:
            raise RobotModelError(
                f"{where}: link {j.child!r} has two parents (joints {parent_of[j.child].name!r}, {j.name!r})"
            )
        parent_of[j.child] = j
    for start in links:
        seen = []
        link = start
        while link in parent_of:
            j = parent_of[link]
            if j.name in seen:
                cycle = seen[seen.index(j.name):]
                raise RobotModelError(f"{where}: joint cycle detected: {' -> '.join(cycle)}")
            seen.append(j.name)
            link = j.parent
    roots = [l for l in links if l not in parent_of]
    if len(roots) != 1:
        raise RobotModelError(f"{where}: expected a single root link, found {roots}")


def load_urdf(path, arms=None, base_link=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise RobotModelError(f"cannot read {path}: {exc}") from exc
    name, links, joints = parse_urdf(text, path.parent, str(path))
    root = next(l for l in links if l not in {j.child for j in joints.values()})
    base_link = base_link or root
    if base_link not in links:
        raise RobotModelError(f"{path}: base link {base_link!r} not found")
    return RobotModel(name, base_link, links, joints, dict(arms or {}), path)


def load_robot_model(path):
    """Load a robot from a JSON robot config (which references its URDF) or
    from a bare URDF (no arms defined)."""
    path = Path(path)
    if path.suffix.lower() == ".urdf":
        return load_urdf(path)
    try:
        cfg = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RobotModelError(f"cannot read robot config {path}: {exc}") from exc
    try:
        arms = {}
        order = cfg.get("channel_order", list(cfg["arms"]))
        for name in order:
            a = cfg["arms"][name]
            arms[name] = ArmSpec(
                name,
                a["mount_link"],
                a["ee_link"],
                tuple(a["joints"]),
                tuple(a.get("gripper_joints", ())),
                float(a.get("gripper_scale", 1.0)),
            )
        urdf = path.parent / cfg["urdf"]
    except KeyError as exc:
        raise RobotModelError(f"{path}: missing key {exc}") from exc
    model = load_urdf(urdf, arms, cfg.get("base_link"))
    model.name = cfg.get("name", model.name)
    for arm in arms.values():
        for jn in arm.joints + arm.gripper_joints:
            if jn not in model.joints or model.joints[jn].type == "fixed":
                raise RobotModelError(f"{path}: arm {arm.name}: {jn!r} is not an actuated joint")
    return model


# ---------------------------------------------------------------------------
# trajectories


@dataclass(eq=False)
class JointTrajectory:
    """``T x C`` joint/gripper values, arm by arm ``[joints..., gripper]``."""

    positions: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[0] < 1:
            raise SchemaError(f"trajectory must be a non-empty T x C array, got shape {self.positions.shape}")
        if not np.all(np.isfinite(self.positions)):
            t = int(np.argwhere(~np.isfinite(self.positions))[0, 0])
            raise SchemaError(f"trajectory has a non-finite value at frame {t}")
        if self.timestamps is not None:
            self.timestamps = np.array(self.timestamps, dtype=np.float64)
            if self.timestamps.shape != (len(self),):
                raise SchemaError("timestamps length does not match trajectory length")

    def __len__(self):
        return self.positions.shape[0]

    def __eq__(self, other):
        if not isinstance(other, JointTrajectory):
            return NotImplemented
        ts = (self.timestamps is None and other.timestamps is None) or (
            self.timestamps is not None
            and other.timestamps is not None
            and np.array_equal(self.timestamps, other.timestamps)
        )
        return bool(ts and np.array_equal(self.positions, other.positions))

    def arm(self, model, arm):
        sl, _ = model.channel_layout()[arm]
        return self.positions[:, sl]

    def gripper(self, model, arm):
        _, g = model.channel_layout()[arm]
        return self.positions[:, g]

    def validate(self, model):
        if self.positions.shape[1] != model.n_channels:
            raise SchemaError(
                f"trajectory has {self.positions.shape[1]} channels, robot expects {model.n_channels}"
            )
        for arm in model.arm_order:
            q = self.arm(model, arm)
            c = model.chain(arm)
            bad = (q < c.lower - LIMIT_SLACK) | (q > c.upper + LIMIT_SLACK)
            if bad.any():
                t, i = (int(v) for v in np.argwhere(bad)[0])
                raise JointLimitError(c.names[i], float(q[t, i]), float(c.lower[i]), float(c.upper[i]), t)
        return self


def save_trajectory(traj, path):
    """Plain-text table, one row per frame; ``%.17g`` round-trips float64."""
    data = traj.positions
    header = "positions"
    if traj.timestamps is not None:
        data = np.column_stack([traj.timestamps, data])
        header = "timestamp,positions"
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header)


def load_trajectory(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing trajectory file {path}")
    with open(path) as fh:
        header = fh.readline()
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if header.startswith("# timestamp"):
        return JointTrajectory(data[:, 1:], data[:, 0])
    return JointTrajectory(data)


# ---------------------------------------------------------------------------
# forward kinematics


def forward_kinematics(model, arm, joints, link=None):
    """End-effector pose (or the pose of ``link`` on the arm) in the base frame.

    Passing the arm's mount link returns the mount pose.
    """
    q = np.asarray(joints, dtype=np.float64)
    model.check_limits(arm, q)
    c = model.chain(arm)
    if link is None or link == model.arms[arm].ee_link:
        return RigidTransform.from_matrix(c.fk(q))
    config = np.zeros(model.n_channels)
    config[model.channel_layout()[arm][0]] = q
    return link_poses(model, config)[link]


def _joint_values(model, config):
    config = np.asarray(config, dtype=np.float64)
    if config.shape != (model.n_channels,):
        raise ValueError(f"expected a {model.n_channels}-vector, got shape {config.shape}")
    values = {}
    layout = model.channel_layout()
    for name, arm in model.arms.items():
        sl, g = layout[name]
        q = config[sl]
        model.check_limits(name, q)
        values.update(zip(arm.joints, q))
        for jn in arm.gripper_joints:
            j = model.joints[jn]
            values[jn] = min(j.upper, max(j.lower, config[g] * arm.gripper_scale))
    return values


def link_poses(model, full_config):
    """Pose of every link in the base frame for a full trajectory row."""
    values = _joint_values(model, full_config)
    children = {}
    for j in model.joints.values():
        children.setdefault(j.parent, []).append(j)
    base_pose = RigidTransform.identity()
    for j in model.path_to(model.base_link):
        base_pose = base_pose @ j.origin
    poses = {model.base_link: base_pose}
    stack = [model.base_link]
    while stack:
        parent = stack.pop()
        for j in children.get(parent, ()):
            q = values.get(j.name, 0.0)
            poses[j.child] = poses[parent] @ j.origin @ j.motion(q)
            stack.append(j.child)
    return poses


def arm_jacobian(model, arm, joints):
    """Analytic geometric Jacobian of the arm's end effector (6 x n)."""
    return model.chain(arm).jacobian(np.asarray(joints, dtype=np.float64))[0]


# ---------------------------------------------------------------------------
# inverse kinematics


@dataclass(frozen=True)
class IkStage:
    pos_tol: float
    rot_tol: float
    max_iters: int


@dataclass(frozen=True)
class IkSchedule:
    """Tolerance escalation for :func:`solve_ik`.

    Stages are tried in order; each stage runs LM from the best point so far
    and then from ``restarts`` uniform random configurations.
    """

    stages: tuple = (
        IkStage(1e-3, 1e-2, 100),
        IkStage(5e-3, 5e-2, 100),
        IkStage(1e-2, 1e-1, 200),
    )
    restarts: int = 5
    damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    damping_min: float = 1e-9
    damping_max: float = 1e3
    joint_mask: tuple | None = None

    def __post_init__(self):
        stages = tuple(s if isinstance(s, IkStage) else IkStage(*s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise ValueError("IK schedule needs at least one stage")
        for a, b in zip(stages, stages[1:]):
            if not (b.pos_tol > a.pos_tol and b.rot_tol > a.rot_tol):
                raise ValueError("stage tolerances must strictly increase")
        if any(s.max_iters < 1 for s in stages) or self.restarts < 0:
            raise ValueError("iteration counts must be >= 1 and restarts >= 0")
        if self.joint_mask is not None:
            object.__setattr__(self, "joint_mask", tuple(bool(m) for m in self.joint_mask))

    def to_dict(self):
        return {
            "stages": [[s.pos_tol, s.rot_tol, s.max_iters] for s in self.stages],
            "restarts": self.restarts,
            "damping": self.damping,
            "damping_up": self.damping_up,
            "damping_down": self.damping_down,
            "damping_min": self.damping_min,
            "damping_max": self.damping_max,
            "joint_mask": list(self.joint_mask) if self.joint_mask is not None else None,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "stages" in d:
            d["stages"] = tuple(IkStage(float(a), float(b), int(c)) for a, b, c in d["stages"])
        if d.get("joint_mask") is not None:
            d["joint_mask"] = tuple(d["joint_mask"])
        return cls(**d)


DEFAULT_SCHEDULE = IkSchedule()


class IkStatus(str, enum.Enum):
    CONVERGED = "converged"
    FILLED = "filled"
    FAILED = "failed"


@dataclass(frozen=True, eq=False)
class IkResult:
    joints: np.ndarray
    status: IkStatus
    stage: int | None
    pos_err: float
    rot_err: float
    iterations: int = 0

    @property
    def converged(self):
        return self.status is IkStatus.CONVERGED

    def __eq__(self, other):
        if not isinstance(other, IkResult):
            return NotImplemented
        return (
            np.array_equal(self.joints, other.joints)
            and self.status == other.status
            and self.stage == other.stage
            and self.pos_err == other.pos_err
            and self.rot_err == other.rot_err
            and self.iterations == other.iterations
        )


def _errors(target, ee):
    dp = target.translation - ee[:3, 3]
    dw = so3_log(target.rotation @ ee[:3, :3].T)
    return np.concatenate([dp, dw])


def _lm(chain, target, q, stage, free, sched):
    """One damped least-squares run; returns (q, residual 6-vector, iters)."""
    lower, upper = chain.lower, chain.upper
    e = _errors(target, chain.fk(q))
    cost = float(e @ e)
    lam = sched.damping
    eye = np.eye(chain.n)
    it = 0
    while it < stage.max_iters:
        if np.linalg.norm(e[:3]) <= stage.pos_tol and np.linalg.norm(e[3:]) <= stage.rot_tol:
            break
        it += 1
        J, _ = chain.jacobian(q)
        J[:, ~free] = 0.0
        dq = np.linalg.solve(J.T @ J + lam * eye, J.T @ e)
        q_new = np.clip(q + dq, lower, upper)
        e_new = _errors(target, chain.fk(q_new))
        cost_new = float(e_new @ e_new)
        if cost_new < cost:
            q, e, cost = q_new, e_new, cost_new
            lam = max(lam / sched.damping_down, sched.damping_min)
        else:
            if lam >= sched.damping_max:
                break
            lam = min(lam * sched.damping_up, sched.damping_max)
    return q, e, it


def solve_ik(model, arm, target, init, schedule=DEFAULT_SCHEDULE, seed=0):
    """Robust IK for one arm: LM with restarts and tolerance escalation.

    The residual is ``[p_target - p; log(R_target R^T)]``. Joints are clamped
    to limits after every step, and masked joints stay at ``init``. Failure is
    reported through ``status`` rather than raised.
    """
    chain = model.chain(arm)
    init = np.asarray(init, dtype=np.float64)
    model.check_limits(arm, init)
    init = np.clip(init, chain.lower, chain.upper)
    free = np.ones(chain.n, dtype=bool)
    if schedule.joint_mask is not None:
        if len(schedule.joint_mask) != chain.n:
            raise ValueError(f"joint mask has {len(schedule.joint_mask)} entries, arm has {chain.n} joints")
        free = ~np.asarray(schedule.joint_mask, dtype=bool)
    rng = np.random.default_rng(seed)

    best_q = init
    best_e = _errors(target, chain.fk(init))
    iters = 0

    def within(e, stage):
        return np.linalg.norm(e[:3]) <= stage.pos_tol and np.linalg.norm(e[3:]) <= stage.rot_tol

    def result(status, stage):
        return IkResult(
            best_q.copy(), status, stage, float(np.linalg.norm(best_e[:3])), float(np.linalg.norm(best_e[3:])), iters
        )

    loosest = schedule.stages[-1]
    first_joint = chain.origins[0][:3, 3]
    if np.linalg.norm(target.translation - first_joint) > chain.reach + loosest.pos_tol:
        return result(IkStatus.FAILED, None)

    for k, stage in enumerate(schedule.stages):
        if within(best_e, stage):
            return result(IkStatus.CONVERGED, k)
        for r in range(schedule.restarts + 1):
            if r == 0:
                start = best_q
            else:
                start = rng.uniform(chain.lower, chain.upper)
                start[~free] = init[~free]
            q, e, n = _lm(chain, target, start, stage, free, schedule)
            iters += n
            if within(e, stage):
                best_q, best_e = q, e
                return result(IkStatus.CONVERGED, k)
            if e @ e < best_e @ best_e:
                best_q, best_e = q, e
    return result(IkStatus.FAILED, None)
