"""Synthetic robots, trajectories and RGB-D scenes for tests and demos.

The scene is analytic (ray-cast planes and boxes), so depth is exact up to
the millimetre quantization of the stored depth maps.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import CameraModel, RigidTransform, profile_camera
from .kinematics import JointTrajectory, load_robot_model
from .reprojection import RgbdFrame

DATA_DIR = Path(str(resources.files("egoshift") / "data"))

TABLE_Z = -0.05
WALL_X = 1.3
BOXES = (
    # (min corner, max corner, rgb)
    ((0.40, -0.07, TABLE_Z), (0.50, 0.03, 0.05), (0.80, 0.25, 0.22)),
    ((0.58, -0.30, TABLE_Z), (0.66, -0.20, 0.12), (0.20, 0.60, 0.35)),
    ((0.60, 0.18, TABLE_Z), (0.70, 0.30, 0.02), (0.90, 0.80, 0.25)),
)

# Mid-workspace posture for each arm; the right arm mirrors the left.
NOMINAL_POSTURE = {
    "L": np.array([-0.25, -1.08, 1.81, 0.0, 0.47, 0.0]),
    "R": np.array([0.25, -1.08, 1.81, 0.0, 0.47, 0.0]),
}


def dual_arm_config_path():
    return DATA_DIR / "dual_arm.json"


def dual_arm_model():
    return load_robot_model(dual_arm_config_path())


def planar_model():
    return load_robot_model(DATA_DIR / "planar_2link.json")


def smooth_trajectory(model, n_frames=100, seed=0, amplitude=0.25, fps=30.0):
    """Sum-of-sinusoids joint motion around :data:`NOMINAL_POSTURE`.

    Grippers open and close smoothly in [0, 1].
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) / max(n_frames - 1, 1)
    rows = np.zeros((n_frames, model.n_channels))
    layout = model.channel_layout()
    for arm in model.arm_order:
        sl, g = layout[arm]
        lower, upper = model.arm_limits(arm)
        base = NOMINAL_POSTURE.get(arm, (lower + upper) / 2.0)
        n = sl.stop - sl.start
        amp = rng.uniform(0.3, 1.0, n) * amplitude
        freq = rng.uniform(0.3, 1.0, n)
        phase = rng.uniform(0.0, 2.0 * np.pi, n)
        q = base + amp * np.sin(2.0 * np.pi * freq * t[:, None] + phase)
        rows[:, sl] = np.clip(q, lower, upper)
        rows[:, g] = 0.5 + 0.5 * np.sin(2.0 * np.pi * rng.uniform(0.5, 1.5) * t + rng.uniform(0, 2 * np.pi))
    return JointTrajectory(rows, np.arange(n_frames) / fps)


def camera_rays(camera):
    """Ray origin and per-pixel directions in the base frame; a ray
    parameter ``t`` equals camera-frame depth."""
    v, u = np.mgrid[0 : camera.height, 0 : camera.width].astype(np.float64)
    d_cam = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1)
    cam_to_base = camera.extrinsic.inverse()
    return cam_to_base.translation, cam_to_base.apply_vector(d_cam)


def _table_color(x, y):
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (x / 0.11 + 0.3 * np.sin(2 * np.pi * y / 0.37)))
    check = 0.5 + 0.5 * np.sin(2 * np.pi * x / 0.23) * np.sin(2 * np.pi * y / 0.19)
    base = np.array([0.55, 0.42, 0.30])
    return base * (0.8 + 0.25 * stripes[..., None]) + 0.12 * check[..., None] * np.array([0.3, 0.25, 0.2])


def _wall_color(y, z):
    band = 0.5 + 0.5 * np.sin(2 * np.pi * (z / 0.15 + y / 0.6))
    return np.array([0.62, 0.66, 0.72]) * (0.85 + 0.2 * band[..., None])


def render_scene(camera, boxes=BOXES, table_z=TABLE_Z, wall_x=WALL_X):
    """Ray-cast the static scene: returns (rgb uint8, depth meters, hit mask)."""
    o, d = camera_rays(camera)
    H, W = camera.height, camera.width
    t_best = np.full((H, W), np.inf)
    color = np.zeros((H, W, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (table_z - o[2]) / d[..., 2]
        hit = (t > 0) & (t < t_best)
        p = o + t[..., None] * d
        t_best = np.where(hit, t, t_best)
        color[hit] = _table_color(p[hit][:, 0], p[hit][:, 1])

        t = (wall_x - o[0]) / d[..., 0]
        hit = (t > 0) & (t < t_best)
        p = o + t[..., None] * d
        t_best = np.where(hit, t, t_best)
        color[hit] = _wall_color(p[hit][:, 1], p[hit][:, 2])

        for lo, hi, rgb in boxes:
            lo, hi = np.asarray(lo), np.asarray(hi)
            t1 = (lo - o) / d
            t2 = (hi - o) / d
            tn = np.nanmax(np.minimum(t1, t2), axis=-1)
            tf = np.nanmin(np.maximum(t1, t2), axis=-1)
            hit = (tn <= tf) & (tn > 0) & (tn < t_best)
            if not hit.any():
                continue
            t_best = np.where(hit, tn, t_best)
            # shade by the face that was hit
            p = o + tn[..., None] * d
            rel = (p - (lo + hi) / 2.0) / ((hi - lo) / 2.0)
            face = np.argmax(np.abs(rel), axis=-1)
            shade = np.choose(face, [0.8, 0.7, 1.0])
            color[hit] = np.asarray(rgb) * shade[hit][:, None]
    valid = np.isfinite(t_best)
    rgb = np.clip(np.rint(color * 255.0), 0, 255).astype(np.uint8)
    return rgb, np.where(valid, t_best, 0.0), valid


def depth_to_stored(depth_m, camera):
    """Meters to stored units; 0 for missing or beyond ``depth_max``."""
    d = np.asarray(depth_m, dtype=np.float64)
    ok = (d > 0) & (d <= camera.depth_max) & np.isfinite(d)
    out = np.zeros(d.shape, dtype=np.uint16)
    out[ok] = np.clip(np.rint(d[ok] / camera.depth_scale), 1, 65535).astype(np.uint16)
    return out


def scene_with_robot(model, config, camera, scene=None):
    """Composite the rendered robot into the static scene by depth."""
    from .rendering import rasterize_robot

    rgb, depth_m, _ = scene if scene is not None else render_scene(camera)
    robot = rasterize_robot(model, config, camera)
    front = robot.mask & ((depth_m == 0) | (robot.depth < depth_m))
    rgb = np.where(front[..., None], robot.rgb, rgb)
    depth_m = np.where(front, robot.depth, depth_m)
    stored = depth_to_stored(depth_m, camera)
    return RgbdFrame(rgb, stored, stored > 0), front


def synthetic_episode(n_frames=12, seed=0, profile="sim", camera=None, model=None, episode_id=None):
    """A source episode: dual-arm fixture robot moving over the synthetic
    table scene, seen from the profile's head camera."""
    from .dataset import Episode

    model = model or dual_arm_model()
    camera = camera or profile_camera(profile)
    traj = smooth_trajectory(model, n_frames, seed)
    scene = render_scene(camera)
    frames, masks = [], []
    for row in traj.positions:
        f, m = scene_with_robot(model, row, camera, scene)
        frames.append(f)
        masks.append(m)
    return Episode(
        id=episode_id or f"synthetic-{seed:04d}",
        camera=camera,
        trajectory=traj,
        frames=frames,
        robot_masks=masks,
        provenance={"kind": "source"},
        wrist=[f"wrist/left/{t:06d}.png" for t in range(n_frames)],
    )


def textured_plane_frame(camera):
    """The static scene without objects (table + wall): smooth textures only."""
    rgb, depth_m, _ = render_scene(camera, boxes=())
    stored = depth_to_stored(depth_m, camera)
    return RgbdFrame(rgb, stored, stored > 0)


def two_plane_frame(width=96, height=64, f=100.0, z_front=1.0, z_back=2.0, square=(36, 20, 24, 24)):
    """Fronto-parallel background with a foreground square, identity extrinsic.

    ``square`` is ``(u0, v0, width, height)`` in pixels.
    """
    cam = CameraModel(f, f, width / 2.0, height / 2.0, width, height, RigidTransform.identity(), 1.0, 10.0)
    v, u = np.mgrid[0:height, 0:width]
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    rgb[..., 0] = (100 + 80 * np.sin(u / 5.0)).astype(np.uint8)
    rgb[..., 1] = (100 + 80 * np.cos(v / 7.0)).astype(np.uint8)
    rgb[..., 2] = 90
    depth = np.full((height, width), z_back)
    u0, v0, w, h = square
    fg = (u >= u0) & (u < u0 + w) & (v >= v0) & (v < v0 + h)
    rgb[fg] = (230, 220, 40)
    depth[fg] = z_front
    stored = depth_to_stored(depth, cam)
    return RgbdFrame(rgb, stored, stored > 0), cam


PLANE_BASELINE_MOTIONS = 10


def plane_double_reprojection_psnr(n_motions=PLANE_BASELINE_MOTIONS, camera=None):
    """Valid-region PSNR of the double-reprojected textured plane against
    itself, for sim-range motions drawn with seeds ``0 .. n_motions - 1``.

    Returns ``[(motion, psnr_db, valid_fraction), ...]``.
    """
    from .geometry import VIEWPOINT_RANGES, sample_ego_motion
    from .metrics import psnr
    from .reprojection import align_depth_to_rgb, double_reproject

    cam = camera or profile_camera("sim")
    src = align_depth_to_rgb(textured_plane_frame(cam), cam)
    rows = []
    for seed in range(n_motions):
        motion = sample_ego_motion(VIEWPOINT_RANGES["sim"], seed)
        out = double_reproject(src, cam, motion)
        valid = out.validity
        rows.append((motion, psnr(out.rgb[valid], src.rgb[valid]), float(valid.mean())))
    return rows
