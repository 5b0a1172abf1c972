"""Retarget a dual-arm joint trajectory to a displaced robot base.

Per arm and frame: FK in the source base frame, re-expression of the pose in
the displaced base frame, robust IK, then interpolation fill for frames IK
could not solve and an optional median filter. Gripper channels pass through
untouched.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from .errors import DimensionError, RetargetError
from .geometry import RigidTransform, ego_motion_to_base_transform, rotation_angle
from .kinematics import DEFAULT_SCHEDULE, IkStatus, JointTrajectory, solve_ik


@dataclass
class RetargetReport:
    """Per-frame, per-arm outcome of :func:`retarget_trajectory`.

    ``status[arm][t]`` is ``"converged"``, ``"filled"`` or ``"failed"``;
    ``stage[arm][t]`` the schedule stage that converged (``-1`` otherwise).
    Errors are measured on the final output against the displaced targets.
    """

    n_frames: int
    status: dict = field(default_factory=dict)
    stage: dict = field(default_factory=dict)
    pos_err: dict = field(default_factory=dict)
    rot_err: dict = field(default_factory=dict)
    smoothing_reverted: dict = field(default_factory=dict)

    @property
    def filled(self):
        return {a: int(sum(s == "filled" for s in st)) for a, st in self.status.items()}

    @property
    def failed(self):
        return {a: int(sum(s == "failed" for s in st)) for a, st in self.status.items()}

    def failure_fraction(self, arm):
        st = self.status[arm]
        return sum(s != "converged" for s in st) / len(st)

    @property
    def max_pos_err(self):
        return max(float(np.max(v)) for v in self.pos_err.values())

    @property
    def max_rot_err(self):
        return max(float(np.max(v)) for v in self.rot_err.values())

    @property
    def mean_pos_err(self):
        return float(np.mean(np.concatenate(list(self.pos_err.values()))))

    @property
    def mean_rot_err(self):
        return float(np.mean(np.concatenate(list(self.rot_err.values()))))

    def to_dict(self):
        return {
            "n_frames": self.n_frames,
            "status": {a: list(v) for a, v in self.status.items()},
            "stage": {a: [int(s) for s in v] for a, v in self.stage.items()},
            "pos_err": {a: [float(x) for x in v] for a, v in self.pos_err.items()},
            "rot_err": {a: [float(x) for x in v] for a, v in self.rot_err.items()},
            "smoothing_reverted": {a: int(v) for a, v in self.smoothing_reverted.items()},
            "filled": self.filled,
            "failed": self.failed,
            "max_pos_err": self.max_pos_err,
            "max_rot_err": self.max_rot_err,
            "mean_pos_err": self.mean_pos_err,
            "mean_rot_err": self.mean_rot_err,
        }


@dataclass(frozen=True)
class RetargetConfig:
    schedule: object = DEFAULT_SCHEDULE
    smoothing_window: int = 5
    fail_threshold: float = 0.5
    warm_start: bool = True
    seed: int = 0

    def to_dict(self):
        return {
            "schedule": self.schedule.to_dict(),
            "smoothing_window": self.smoothing_window,
            "fail_threshold": self.fail_threshold,
            "warm_start": self.warm_start,
            "seed": self.seed,
        }


def frame_seed(seed, arm_index, t):
    return int(np.random.SeedSequence([seed, arm_index, t]).generate_state(1)[0])


def displaced_targets(model, trajectory, motion):
    """``{arm: [T_v @ FK(q_t)]}`` for every frame."""
    T_v = ego_motion_to_base_transform(motion)
    out = {}
    for arm in model.arm_order:
        chain = model.chain(arm)
        q = trajectory.arm(model, arm)
        out[arm] = [T_v @ RigidTransform.from_matrix(chain.fk(row)) for row in q]
    return out


def interpolation_fill(values, ok):
    """Fill rows where ``ok`` is False by linear interpolation between the
    nearest ok rows; leading/trailing gaps hold the nearest ok row."""
    values = np.array(values, dtype=np.float64)
    ok = np.asarray(ok, dtype=bool)
    good = np.flatnonzero(ok)
    if good.size == 0:
        return values
    for t in np.flatnonzero(~ok):
        right = np.searchsorted(good, t)
        if right == 0:
            values[t] = values[good[0]]
        elif right == good.size:
            values[t] = values[good[-1]]
        else:
            a, b = good[right - 1], good[right]
            s = (t - a) / (b - a)
            values[t] = (1.0 - s) * values[a] + s * values[b]
    return values


def median_smooth(values, window):
    """Per-channel running median with edge replication."""
    values = np.asarray(values, dtype=np.float64)
    if window <= 1 or values.shape[0] < 2:
        return values.copy()
    return median_filter(values, size=(window, 1), mode="nearest")


def _solve_arm(model, arm, arm_index, targets, q_src, config, jobs):
    schedule = config.schedule
    n = len(targets)
    if config.warm_start:
        results = []
        init = q_src[0]
        for t in range(n):
            r = solve_ik(model, arm, targets[t], init, schedule, frame_seed(config.seed, arm_index, t))
            results.append(r)
            if r.converged:
                init = r.joints
        return results

    def one(t):
        return solve_ik(model, arm, targets[t], q_src[0], schedule, frame_seed(config.seed, arm_index, t))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, range(n)))


def retarget_trajectory(model, trajectory, motion, config=RetargetConfig(), jobs=1):
    """Retarget ``trajectory`` to the base displaced by ``motion``.

    Returns ``(JointTrajectory, RetargetReport)``. Raises
    :class:`RetargetError` (carrying the report) when more than
    ``config.fail_threshold`` of an arm's frames fail IK.
    """
    if config.smoothing_window < 1:
        raise ValueError("smoothing_window must be >= 1")
    trajectory.validate(model)
    targets = displaced_targets(model, trajectory, motion)
    layout = model.channel_layout()
    out = trajectory.positions.copy()
    report = RetargetReport(len(trajectory))

    for arm_index, arm in enumerate(model.arm_order):
        chain = model.chain(arm)
        sl, _ = layout[arm]
        q_src = trajectory.positions[:, sl]
        results = _solve_arm(model, arm, arm_index, targets[arm], q_src, config, jobs)
        ok = np.array([r.converged for r in results])
        stage = np.array([r.stage if r.converged else -1 for r in results])
        q = np.array([r.joints for r in results])
        report.status[arm] = ["converged" if c else "failed" for c in ok]
        report.stage[arm] = stage.tolist()
        if (~ok).mean() > config.fail_threshold:
            report.pos_err[arm] = np.array([r.pos_err for r in results])
            report.rot_err[arm] = np.array([r.rot_err for r in results])
            for other in model.arm_order:
                report.pos_err.setdefault(other, np.zeros(0))
                report.rot_err.setdefault(other, np.zeros(0))
            raise RetargetError(
                f"arm {arm}: IK failed on {int((~ok).sum())}/{len(ok)} frames "
                f"(threshold {config.fail_threshold:.0%})",
                report,
            )

        reverted = 0
        if config.smoothing_window > 1 and ok.sum() > 1:
            idx = np.flatnonzero(ok)
            smoothed = median_smooth(q[idx], config.smoothing_window)
            for k, t in enumerate(idx):
                if np.array_equal(smoothed[k], q[t]):
                    continue
                # keep the median only if the frame still meets the tolerance it converged at
                tol = config.schedule.stages[stage[t]]
                ee = RigidTransform.from_matrix(chain.fk(smoothed[k]))
                dp = np.linalg.norm(targets[arm][t].translation - ee.translation)
                dw = rotation_angle(targets[arm][t].rotation @ ee.rotation.T)
                if dp <= tol.pos_tol and dw <= tol.rot_tol:
                    q[t] = smoothed[k]
                else:
                    reverted += 1
        report.smoothing_reverted[arm] = reverted

        q = interpolation_fill(q, ok)
        q = np.clip(q, chain.lower, chain.upper)
        gap = "filled" if ok.any() else "failed"
        report.status[arm] = ["converged" if c else gap for c in ok]
        out[:, sl] = q

        pe, re = [], []
        for t in range(len(q)):
            ee = RigidTransform.from_matrix(chain.fk(q[t]))
            pe.append(np.linalg.norm(targets[arm][t].translation - ee.translation))
            re.append(rotation_angle(targets[arm][t].rotation @ ee.rotation.T))
        report.pos_err[arm] = np.array(pe)
        report.rot_err[arm] = np.array(re)

    ts = None if trajectory.timestamps is None else trajectory.timestamps.copy()
    return JointTrajectory(out, ts), report


@dataclass
class ReplayReport:
    """Pose discrepancy between retargeted FK and displaced source FK."""

    pos_err: np.ndarray  # T x n_arms, meters
    rot_err: np.ndarray  # T x n_arms, radians
    arms: tuple
    pos_thresh: float
    rot_thresh: float

    @property
    def frame_ok(self):
        return np.all((self.pos_err <= self.pos_thresh) & (self.rot_err <= self.rot_thresh), axis=1)

    @property
    def fraction_ok(self):
        return float(self.frame_ok.mean())

    def fraction_under(self, pos_thresh, rot_thresh):
        ok = np.all((self.pos_err <= pos_thresh) & (self.rot_err <= rot_thresh), axis=1)
        return float(ok.mean())

    def to_dict(self):
        return {
            "arms": list(self.arms),
            "pos_thresh": self.pos_thresh,
            "rot_thresh": self.rot_thresh,
            "fraction_ok": self.fraction_ok,
            "max_pos_err": float(self.pos_err.max()),
            "max_rot_err": float(self.rot_err.max()),
            "mean_pos_err": float(self.pos_err.mean()),
            "mean_rot_err": float(self.rot_err.mean()),
            "pos_err": self.pos_err.tolist(),
            "rot_err": self.rot_err.tolist(),
        }


def replay_consistency_check(model, original, retargeted, motion, pos_thresh=5e-3, rot_thresh=5e-2):
    """Compare ``FK(retargeted_t)`` with ``T_v @ FK(original_t)`` per frame."""
    if len(original) != len(retargeted):
        raise DimensionError(
            f"trajectory lengths differ: original {len(original)}, retargeted {len(retargeted)}"
        )
    targets = displaced_targets(model, original, motion)
    pe = np.zeros((len(original), len(model.arm_order)))
    re = np.zeros_like(pe)
    for k, arm in enumerate(model.arm_order):
        chain = model.chain(arm)
        for t, row in enumerate(retargeted.arm(model, arm)):
            ee = chain.fk(row)
            pe[t, k] = np.linalg.norm(targets[arm][t].translation - ee[:3, 3])
            re[t, k] = rotation_angle(targets[arm][t].rotation @ ee[:3, :3].T)
    return ReplayReport(pe, re, model.arm_order, pos_thresh, rot_thresh)
