"""Command-line interface.

Exit codes: 0 success, 2 usage, 3 data/schema, 4 numerical failure. Errors
are reported on stderr as a single line ``ERROR <Class>: <detail>``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .errors import EgoShiftError, SchemaError
from .fixtures import dual_arm_config_path, synthetic_episode
from .geometry import VIEWPOINT_RANGES, EgoMotion, ViewpointRange, camera_relative_transform, sample_ego_motion
from .imageops import hole_fill
from .kinematics import IkSchedule, load_robot_model, load_trajectory, save_trajectory
from .metrics import video_metrics
from .pipeline import PipelineConfig, attach_repaired_video, generate_novel_episode, make_training_pairs, prepare_scene_frame
from .rendering import render_robot_video
from .retarget import RetargetConfig, replay_consistency_check, retarget_trajectory

DEFAULTS = {
    "viewpoint_range": "sim",
    "smoothing_window": 5,
    "fail_threshold": 0.5,
    "mask_dilation": 2,
    "supersample": 1,
    "schedule": None,
}


class UsageError(Exception):
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration


def load_profile(name):
    """Built-in profile name (``sim``, ``real``, ...) or a JSON profile file.

    A profile file may set any key of :data:`DEFAULTS`; ``viewpoint_range``
    is either a built-in range name or ``{"dx": [lo, hi], "dy": [lo, hi],
    "dtheta_deg": [lo, hi]}``.
    """
    cfg = dict(DEFAULTS)
    if name in VIEWPOINT_RANGES:
        cfg["viewpoint_range"] = name
        cfg["profile"] = name
        return cfg
    path = Path(name)
    if not path.is_file():
        raise UsageError(f"unknown profile {name!r} (built-in: {', '.join(VIEWPOINT_RANGES)})")
    data = ds.read_json(path)
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise SchemaError(f"{path}: unknown profile keys {sorted(unknown)}")
    cfg.update(data)
    cfg["profile"] = str(path)
    return cfg


def viewpoint_range(spec):
    if isinstance(spec, str):
        if spec not in VIEWPOINT_RANGES:
            raise UsageError(f"unknown range profile {spec!r} (built-in: {', '.join(VIEWPOINT_RANGES)})")
        return VIEWPOINT_RANGES[spec]
    try:
        return ViewpointRange.from_degrees(tuple(spec["dx"]), tuple(spec["dy"]), tuple(spec["dtheta_deg"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid viewpoint range {spec!r}") from exc


def range_to_dict(r):
    return {"dx": list(r.dx_range), "dy": list(r.dy_range), "dtheta_deg": [math.degrees(a) for a in r.dtheta_range]}


def effective_config(args):
    """Profile values overridden by any flags given; ``jobs``/``out`` omitted."""
    cfg = load_profile(args.profile)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    cfg["seed"] = args.seed
    return cfg


def pipeline_config(cfg):
    schedule = IkSchedule() if cfg["schedule"] is None else _load_schedule(cfg["schedule"])
    rc = RetargetConfig(
        schedule=schedule,
        smoothing_window=int(cfg["smoothing_window"]),
        fail_threshold=float(cfg["fail_threshold"]),
        seed=int(cfg["seed"]),
    )
    return PipelineConfig(rc, int(cfg["mask_dilation"]), int(cfg["supersample"]))


def _load_schedule(spec):
    data = ds.read_json(spec) if isinstance(spec, str) else spec
    try:
        return IkSchedule.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid IK schedule: {exc}") from exc


def _motion_from_flags(args):
    return EgoMotion.from_degrees(args.dx, args.dy, args.dtheta_deg)


def _parse_motion(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"--motion expects dx,dy,dtheta_deg, got {text!r}")
    try:
        dx, dy, dth = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"--motion expects three numbers, got {text!r}") from None
    return EgoMotion.from_degrees(dx, dy, dth)


def _warn_outside(motion, cfg):
    r = viewpoint_range(cfg["viewpoint_range"])
    if not r.contains(motion):
        print(f"warning: motion {motion.to_dict()} lies outside the {cfg['profile']} range", file=sys.stderr)


def _echo(args, cfg, **extra):
    return {
        "command": args.command,
        "config": {k: v for k, v in cfg.items()},
        "pipeline": pipeline_config(cfg).to_dict(),
        **extra,
    }


def _out(args):
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _finite(x):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


# ---------------------------------------------------------------------------
# commands


def cmd_make_fixture(args, cfg):
    ep = synthetic_episode(args.frames, args.seed, profile=args.camera or "sim", episode_id=args.id)
    ds.save_episode(ep, _out(args), args.jobs)
    print(f"wrote fixture episode {ep.id} ({len(ep)} frames) to {args.out}")


def cmd_retarget(args, cfg):
    model = load_robot_model(args.robot)
    ep = ds.load_episode(args.episode, args.jobs)
    motion = _motion_from_flags(args)
    _warn_outside(motion, cfg)
    pc = pipeline_config(cfg)
    traj, report = retarget_trajectory(model, ep.trajectory, motion, pc.retarget, args.jobs)
    out = _out(args)
    save_trajectory(traj, out / "trajectory.csv")
    ds.write_json(
        out / "retarget_report.json",
        {**_echo(args, cfg, episode=ep.id, motion=motion.to_dict()), "report": report.to_dict()},
    )
    print(f"retargeted {len(traj)} frames; max error {report.max_pos_err:.2e} m / {report.max_rot_err:.2e} rad")


def cmd_reproject(args, cfg):
    model = load_robot_model(args.robot)
    ep = ds.load_episode(args.episode, args.jobs)
    motion = _motion_from_flags(args)
    _warn_outside(motion, cfg)
    rel = camera_relative_transform(ep.camera, motion)
    dil = int(cfg["mask_dilation"])
    frames = ds._map(lambda t: prepare_scene_frame(model, ep, t, rel, dil), range(len(ep)), args.jobs)
    if args.fill:
        frames = [hole_fill(f) for f in frames]
    out = ds._prepare_dir(_out(args), "reproject.json", ["rgb", "depth", "validity"])
    ds._write_frames(out, "rgb", [f.rgb for f in frames], args.jobs)
    ds._write_frames(out, "depth", [f.depth for f in frames], args.jobs)
    ds._write_frames(out, "validity", [f.validity for f in frames], args.jobs)
    ds.write_json(
        out / "reproject.json",
        {
            **_echo(args, cfg, episode=ep.id, motion=motion.to_dict(), filled=bool(args.fill)),
            "frame_count": len(frames),
            "valid_fraction": [float(f.validity.mean()) for f in frames],
            "files": ds._checksums(out, exclude={"reproject.json"}),
        },
    )
    print(f"reprojected {len(frames)} frames to {out}")


def cmd_render_robot(args, cfg):
    model = load_robot_model(args.robot)
    ep = ds.load_episode(args.episode, args.jobs)
    traj = load_trajectory(args.trajectory) if args.trajectory else ep.trajectory
    frames = render_robot_video(model, traj, ep.camera, args.jobs, int(cfg["supersample"]))
    out = ds._prepare_dir(_out(args), "render.json", ["rgb", "mask", "depth"])
    ds._write_frames(out, "rgb", [f.rgb for f in frames], args.jobs)
    ds._write_frames(out, "mask", [f.mask for f in frames], args.jobs)
    from .fixtures import depth_to_stored

    ds._write_frames(out, "depth", [depth_to_stored(np.where(f.mask, f.depth, 0.0), ep.camera) for f in frames], args.jobs)
    ds.write_json(
        out / "render.json",
        {
            **_echo(args, cfg, episode=ep.id, trajectory=args.trajectory),
            "frame_count": len(frames),
            "files": ds._checksums(out, exclude={"render.json"}),
        },
    )
    print(f"rendered {len(frames)} robot frames to {out}")


def cmd_generate(args, cfg):
    model = load_robot_model(args.robot)
    ep = ds.load_episode(args.episode, args.jobs)
    if args.motion is not None:
        motion = _parse_motion(args.motion)
        _warn_outside(motion, cfg)
    else:
        if args.range is not None:
            cfg["viewpoint_range"] = args.range
        motion = sample_ego_motion(viewpoint_range(cfg["viewpoint_range"]), args.seed)
    pc = pipeline_config(cfg)
    novel, bundle, report = generate_novel_episode(ep, motion, model, pc, args.jobs, new_id=args.id)
    echo = _echo(args, cfg, motion=motion.to_dict(), source_episode=ep.id)
    novel.config = echo
    bundle.config = echo
    out = _out(args)
    ds.save_episode(novel, out / "episode", args.jobs)
    ds.save_bundle(bundle, out / "bundle", args.jobs)
    ds.write_json(out / "retarget_report.json", report.to_dict())
    print(
        f"generated {novel.id}: motion dx={motion.dx:.4f} dy={motion.dy:.4f} "
        f"dtheta={motion.dtheta_deg:.3f} deg, {len(novel)} frames"
    )


def cmd_make_pairs(args, cfg):
    model = load_robot_model(args.robot)
    ep = ds.load_episode(args.episode, args.jobs)
    if args.range is not None:
        cfg["viewpoint_range"] = args.range
    r = viewpoint_range(cfg["viewpoint_range"])
    pairs = make_training_pairs(ep, model, r, args.count, args.seed, pipeline_config(cfg), args.jobs)
    out = _out(args)
    echo = _echo(args, cfg, range=range_to_dict(r), source_episode=ep.id)
    for p in pairs:
        p.config = echo
        ds.save_training_pair(p, out / p.name, args.jobs)
    names = [p.name for p in pairs]
    train, val = ds.split_train_val(names, args.seed) if names else ([], [])
    ds.write_json(
        out / "pairs.json",
        {**echo, "pairs": [{"name": p.name, "motion": p.motion.to_dict()} for p in pairs], "train": train, "val": val},
    )
    print(f"wrote {len(pairs)} training pairs ({len(train)} train / {len(val)} val) to {out}")


def cmd_repair_stub(args, cfg):
    ds.identity_repair(args.bundle, _out(args), args.jobs)
    print(f"wrote identity-repaired video to {args.out}")


def cmd_attach(args, cfg):
    ep = ds.load_episode(args.episode, args.jobs)
    frames, model_id, episode_id = ds.load_repaired(args.repaired, args.jobs)
    if episode_id is not None and episode_id != ep.id:
        raise SchemaError(f"repaired video belongs to episode {episode_id!r}, not {ep.id!r}")
    final = attach_repaired_video(ep, frames, model_id)
    ds.save_episode(final, _out(args), args.jobs)
    print(f"attached {len(frames)} repaired frames ({model_id}) to {ep.id}")


def cmd_mix(args, cfg):
    std = ds.list_episodes(args.standard)
    gen = ds.list_episodes(args.generated)
    manifest = ds.mix_datasets([str(p) for p in std], [str(p) for p in gen], args.ratio, args.seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        ds.save_mix_manifest(manifest, args.out)
    else:
        print(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    c = manifest.counts
    print(f"mix {args.ratio}: {c['standard']} standard + {c['generated']} generated", file=sys.stderr)


def _frames_from(path, jobs):
    path = Path(path)
    if ds.is_episode_dir(path):
        return [f.rgb for f in ds.load_episode(path, jobs).frames]
    return ds.load_repaired(path, jobs)[0]


def cmd_eval_video(args, cfg):
    pred = _frames_from(args.pred, args.jobs)
    ref = _frames_from(args.ref, args.jobs)
    m = video_metrics(pred, ref)
    report = {
        "pred": str(args.pred),
        "ref": str(args.ref),
        "n_frames": m["n_frames"],
        "mean_psnr": _finite(m["mean_psnr"]),
        "mean_ssim": m["mean_ssim"],
        "frames": [{"frame": r["frame"], "psnr": _finite(r["psnr"]), "ssim": r["ssim"]} for r in m["frames"]],
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def _retargeted_source(path):
    """``(trajectory, motion)`` from a generated episode or a retarget output dir."""
    path = Path(path)
    if ds.is_episode_dir(path):
        ep = ds.load_episode(path, verify=False)
        if ep.motion is None:
            raise SchemaError(f"{path}: episode provenance has no motion")
        return ep.trajectory, ep.motion
    rep = ds.read_json(path / "retarget_report.json")
    return load_trajectory(path / "trajectory.csv"), EgoMotion.from_dict(rep["motion"])


def cmd_replay_check(args, cfg):
    model = load_robot_model(args.robot)
    orig = ds.load_episode(args.original, verify=False).trajectory
    traj, motion = _retargeted_source(args.retargeted)
    rep = replay_consistency_check(model, orig, traj, motion, args.pos_tol, args.rot_tol)
    summary = {k: v for k, v in rep.to_dict().items() if k not in ("pos_err", "rot_err")}
    summary["motion"] = motion.to_dict()
    summary["n_frames"] = len(orig)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(json.dumps({**summary, **rep.to_dict()}, indent=2, sort_keys=True) + "\n")
    print(text)
    if args.require is not None and rep.fraction_ok < args.require:
        from .errors import NumericalError

        raise NumericalError(f"only {rep.fraction_ok:.1%} of frames consistent, required {args.require:.1%}")


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--jobs", type=int, default=1, help="worker threads (does not affect outputs)")
    common.add_argument("--seed", type=int, default=0, help="seed for every stochastic step")
    common.add_argument("--profile", default="sim", help="built-in profile (sim, real) or JSON profile file")
    common.add_argument("--out", help="output directory (or file for mix / eval-video / replay-check)")
    common.add_argument("--robot", default=str(dual_arm_config_path()), help="robot config JSON or URDF")

    tuning = _Parser(add_help=False)
    tuning.add_argument("--smoothing-window", dest="smoothing_window", type=int)
    tuning.add_argument("--fail-threshold", dest="fail_threshold", type=float)
    tuning.add_argument("--mask-dilation", dest="mask_dilation", type=int)
    tuning.add_argument("--supersample", type=int)
    tuning.add_argument("--schedule", help="IK schedule JSON file")

    motion = _Parser(add_help=False)
    motion.add_argument("--dx", type=float, default=0.0, help="base displacement along x, meters")
    motion.add_argument("--dy", type=float, default=0.0, help="base displacement along y, meters")
    motion.add_argument("--dtheta-deg", dest="dtheta_deg", type=float, default=0.0, help="base yaw, degrees")

    p = _Parser(prog="egoshift", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, parents, help):
        sp = sub.add_parser(name, parents=[common, *parents], help=help)
        sp.set_defaults(func=fn)
        return sp

    sp = add("make-fixture", cmd_make_fixture, [], "write a synthetic source episode")
    sp.add_argument("--frames", type=int, default=12)
    sp.add_argument("--camera", choices=("sim", "real"), help="camera profile (default sim)")
    sp.add_argument("--id", help="episode id")

    sp = add("retarget", cmd_retarget, [tuning, motion], "retarget an episode's actions")
    sp.add_argument("--episode", required=True)

    sp = add("reproject", cmd_reproject, [tuning, motion], "novel-view scene frames")
    sp.add_argument("--episode", required=True)
    sp.add_argument("--fill", action="store_true", help="hole-fill the reprojected frames")

    sp = add("render-robot", cmd_render_robot, [tuning], "render robot rgb/mask/depth frames")
    sp.add_argument("--episode", required=True)
    sp.add_argument("--trajectory", help="trajectory CSV (default: the episode's)")

    sp = add("generate", cmd_generate, [tuning], "novel-viewpoint episode plus conditioning bundle")
    sp.add_argument("--episode", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--motion", help="dx,dy,dtheta_deg")
    g.add_argument("--sample", action="store_true", help="sample the motion from --range with --seed")
    sp.add_argument("--range", help="viewpoint range profile for --sample (default: the profile's)")
    sp.add_argument("--id", help="id of the generated episode")

    sp = add("make-pairs", cmd_make_pairs, [tuning], "double-reprojection training pairs")
    sp.add_argument("--episode", required=True)
    sp.add_argument("--range", help="viewpoint range profile (default: the profile's)")
    sp.add_argument("--count", type=int, default=1)

    sp = add("repair-stub", cmd_repair_stub, [], "identity repair: naive composition of a bundle")
    sp.add_argument("--bundle", required=True)

    sp = add("attach", cmd_attach, [], "attach a repaired video to a generated episode")
    sp.add_argument("--episode", required=True)
    sp.add_argument("--repaired", required=True)

    sp = add("mix", cmd_mix, [], "data-mixing manifest")
    sp.add_argument("--standard", required=True)
    sp.add_argument("--generated", required=True)
    sp.add_argument("--ratio", required=True, help="standard:generated, e.g. 1:0.5")

    sp = add("eval-video", cmd_eval_video, [], "PSNR/SSIM of two videos")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--ref", required=True)

    sp = add("replay-check", cmd_replay_check, [], "pose-consistency of a retargeted trajectory")
    sp.add_argument("--original", required=True)
    sp.add_argument("--retargeted", required=True)
    sp.add_argument("--pos-tol", dest="pos_tol", type=float, default=5e-3)
    sp.add_argument("--rot-tol", dest="rot_tol", type=float, default=5e-2)
    sp.add_argument("--require", type=float, help="fail (exit 4) below this consistent-frame fraction")
    return p


def _error(kind, detail, code):
    detail = " ".join(str(detail).split())
    print(f"ERROR {kind}: {detail}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = effective_config(args)
        args.func(args, cfg)
    except UsageError as exc:
        return _error("UsageError", exc, 2)
    except EgoShiftError as exc:
        return _error(type(exc).__name__, exc, exc.exit_code)
    except (OSError, ValueError) as exc:
        return _error(type(exc).__name__, exc, 3)
    return 0


if __name__ == "__main__":
    sys.exit(main())
