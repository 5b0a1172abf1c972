"""End-to-end generation of novel-viewpoint demonstrations and of
double-reprojection training pairs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import IDENTITY_REPAIR, ConditioningBundle, Episode, TrainingPair
from .errors import DimensionError, SchemaError
from .fixtures import depth_to_stored
from .geometry import camera_relative_transform, sample_ego_motion
from .imageops import hole_fill, naive_compose
from .rendering import rasterize_robot
from .reprojection import (
    RgbdFrame,
    align_depth_to_rgb,
    apply_mask_with_dilation,
    double_reproject,
    reproject_frame,
)
from .retarget import RetargetConfig, retarget_trajectory


@dataclass(frozen=True)
class PipelineConfig:
    retarget: RetargetConfig = field(default_factory=RetargetConfig)
    mask_dilation: int = 2
    supersample: int = 1

    def to_dict(self):
        return {
            "retarget": self.retarget.to_dict(),
            "mask_dilation": self.mask_dilation,
            "supersample": self.supersample,
        }


def _map(fn, n, jobs):
    if jobs <= 1 or n < 2:
        return [fn(t) for t in range(n)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(n)))


def _require_depth(episode):
    for t, f in enumerate(episode.frames):
        if not (f.depth > 0).any():
            raise SchemaError(f"episode {episode.id!r}: frame {t} has no depth")


def source_robot_mask(model, episode, t, camera):
    """Robot region of frame ``t``: rendered from the recorded joints,
    unioned with the stored mask when the episode has one."""
    mask = rasterize_robot(model, episode.trajectory.positions[t], camera).mask
    if episode.robot_masks is not None:
        mask = mask | episode.robot_masks[t]
    return mask


def prepare_scene_frame(model, episode, t, relative, dilation):
    """Robot-free scene of frame ``t`` seen through ``relative`` (unfilled)."""
    cam = episode.camera
    frame = align_depth_to_rgb(episode.frames[t], cam)
    masked = apply_mask_with_dilation(frame, source_robot_mask(model, episode, t, cam), dilation)
    return reproject_frame(masked, cam, relative)


def generate_novel_episode(episode, motion, model, config=PipelineConfig(), jobs=1, new_id=None):
    """Retarget the actions and synthesize the novel-view observation video.

    Returns ``(episode, bundle, report)``. The episode's frames are the naive
    composition of the hole-filled novel-view scene and the robot rendered
    from the retargeted joints; the bundle carries the same inputs for an
    external repair model.
    """
    _require_depth(episode)
    cam = episode.camera
    traj, report = retarget_trajectory(model, episode.trajectory, motion, config.retarget, jobs)
    T01 = camera_relative_transform(cam, motion)

    def one(t):
        scene = hole_fill(prepare_scene_frame(model, episode, t, T01, config.mask_dilation))
        robot = rasterize_robot(model, traj.positions[t], cam, config.supersample)
        rgb = naive_compose(scene, robot)
        depth = np.where(robot.mask, depth_to_stored(np.where(robot.mask, robot.depth, 0.0), cam), scene.depth)
        return scene.rgb, robot, RgbdFrame(rgb, depth)

    out = _map(one, len(episode), jobs)
    cfg = config.to_dict()
    provenance = {
        "kind": "retargeted",
        "source": episode.id,
        "motion": motion.to_dict(),
        "repair_model": None,
    }
    novel = Episode(
        id=new_id or f"{episode.id}-novel",
        camera=cam,
        trajectory=traj,
        frames=[f for _, _, f in out],
        robot_masks=[r.mask for _, r, _ in out],
        provenance=provenance,
        wrist=list(episode.wrist),
        config=cfg,
    )
    bundle = ConditioningBundle(
        episode_id=novel.id,
        motion=motion,
        camera=cam,
        scene=[s for s, _, _ in out],
        robot_rgb=[r.rgb for _, r, _ in out],
        robot_mask=[r.mask for _, r, _ in out],
        config=cfg,
    )
    return novel, bundle, report


def attach_repaired_video(episode, frames, repair_model=IDENTITY_REPAIR):
    """Swap in the externally repaired rgb frames; depth and validity stay."""
    if len(frames) != len(episode):
        raise DimensionError(f"repaired video has {len(frames)} frames, episode has {len(episode)}")
    new_frames = []
    for t, (old, rgb) in enumerate(zip(episode.frames, frames)):
        rgb = np.asarray(rgb)
        if rgb.shape != old.rgb.shape:
            raise DimensionError(f"repaired frame {t} is {rgb.shape}, episode frames are {old.rgb.shape}")
        new_frames.append(RgbdFrame(rgb.astype(np.uint8), old.depth.copy(), old.validity.copy()))
    provenance = dict(episode.provenance)
    provenance["repair_model"] = repair_model
    return Episode(
        id=episode.id,
        camera=episode.camera,
        trajectory=episode.trajectory,
        frames=new_frames,
        robot_masks=episode.robot_masks,
        provenance=provenance,
        wrist=list(episode.wrist),
        config=episode.config,
    )


def pair_motion(viewpoint_range, seed, index):
    return sample_ego_motion(viewpoint_range, np.random.SeedSequence([seed, index]))


def make_training_pairs(episode, model, viewpoint_range, pairs_per_episode, seed, config=PipelineConfig(), jobs=1):
    """Double-reprojection pairs; pair ``k`` uses the motion drawn from
    ``SeedSequence([seed, k])``.

    The source robot is masked out before the round trip, so its pixels
    never smear into the scene input; the resulting robot-shaped holes are
    filled together with the disocclusions.
    """
    if pairs_per_episode < 0:
        raise ValueError("pairs_per_episode must be >= 0")
    if pairs_per_episode == 0:
        return []
    _require_depth(episode)
    cam = episode.camera

    def prep(t):
        robot = rasterize_robot(model, episode.trajectory.positions[t], cam, config.supersample)
        mask = robot.mask if episode.robot_masks is None else robot.mask | episode.robot_masks[t]
        frame = apply_mask_with_dilation(align_depth_to_rgb(episode.frames[t], cam), mask, config.mask_dilation)
        return robot, frame

    prepared = _map(prep, len(episode), jobs)
    robot_rgb = [r.rgb for r, _ in prepared]
    robot_mask = [r.mask for r, _ in prepared]
    target = [f.rgb.copy() for f in episode.frames]
    cfg = config.to_dict()

    pairs = []
    for k in range(pairs_per_episode):
        motion = pair_motion(viewpoint_range, seed, k)
        scene = _map(lambda t: hole_fill(double_reproject(prepared[t][1], cam, motion)).rgb, len(episode), jobs)
        pairs.append(
            TrainingPair(
                episode_id=episode.id,
                index=k,
                motion=motion,
                scene=scene,
                robot_rgb=robot_rgb,
                robot_mask=robot_mask,
                target=target,
                config={**cfg, "seed": seed},
            )
        )
    return pairs
