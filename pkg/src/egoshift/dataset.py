"""On-disk formats: episodes, conditioning bundles, training pairs, repaired
videos and mix manifests, plus train/val splitting and dataset mixing.

Episode directory::

    episode.json            manifest (schema version, checksums); written last
    calibration.json        camera model
    trajectory.csv          one row per frame, optional leading timestamp
    frames/rgb/000000.png   8-bit RGB
    frames/depth/000000.png 16-bit depth in stored units (mm by default)
    frames/validity/...     8-bit 0/255
    frames/robot_mask/...   8-bit 0/255 (optional)

Every directory format ends with a JSON manifest that lists a SHA-256 for
each file; the manifest is written last so its presence marks a complete
directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionError, SchemaError, ShortfallError
from .geometry import CameraModel, EgoMotion, load_calibration, save_calibration
from .kinematics import JointTrajectory, load_trajectory, save_trajectory
from .reprojection import RgbdFrame

SCHEMA_VERSION = 1
BUNDLE_FORMAT_VERSION = 1
PAIR_FORMAT_VERSION = 1
MIX_FORMAT_VERSION = 1

EPISODE_MANIFEST = "episode.json"
BUNDLE_MANIFEST = "manifest.json"
PAIR_MANIFEST = "pair.json"
REPAIR_MANIFEST = "repair.json"
MIX_MANIFEST = "mix.json"


# ---------------------------------------------------------------------------
# low-level file helpers


def frame_name(t):
    return f"{t:06d}.png"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    """Atomic JSON write with sorted keys (byte-stable across runs)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_png(path, array):
    a = np.asarray(array)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    if a.ndim == 3:
        img = Image.fromarray(np.ascontiguousarray(a, dtype=np.uint8), "RGB")
    elif a.dtype == np.uint16:
        img = Image.fromarray(np.ascontiguousarray(a))
    else:
        img = Image.fromarray(np.ascontiguousarray(a, dtype=np.uint8), "L")
    img.save(path, format="PNG")


def read_png(path, kind):
    """Read a PNG written by :func:`write_png`; ``kind`` is rgb, depth or mask."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing frame file {path}")
    with Image.open(path) as img:
        if kind == "rgb":
            if img.mode != "RGB":
                raise SchemaError(f"{path}: expected an RGB image, got mode {img.mode}")
            return np.asarray(img, dtype=np.uint8).copy()
        if kind == "depth":
            if img.mode not in ("I;16", "I;16B", "I"):
                raise SchemaError(f"{path}: expected a 16-bit depth image, got mode {img.mode}")
            return np.asarray(img).astype(np.uint16)
        a = np.asarray(img.convert("L"))
    if not np.isin(a, (0, 255)).all():
        raise SchemaError(f"{path}: mask values must be 0 or 255")
    return a == 255


def _write_frames(root, sub, arrays, jobs):
    d = Path(root) / sub
    d.mkdir(parents=True, exist_ok=True)

    def one(t):
        write_png(d / frame_name(t), arrays[t])

    _map(one, range(len(arrays)), jobs)


def _read_frames(root, sub, n, kind, jobs):
    d = Path(root) / sub
    return _map(lambda t: read_png(d / frame_name(t), kind), range(n), jobs)


def _map(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _checksums(root, exclude=()):
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root).as_posix()
        if p.is_file() and rel not in exclude and not rel.endswith(".tmp"):
            out[rel] = sha256_file(p)
    return out


def verify_checksums(root, files):
    root = Path(root)
    for rel, digest in sorted(files.items()):
        p = root / rel
        if not p.exists():
            raise SchemaError(f"{root}: file {rel} listed in the manifest is missing")
        if sha256_file(p) != digest:
            raise SchemaError(f"{root}: checksum mismatch for {rel}")


def _count_frames(d):
    d = Path(d)
    return len(list(d.glob("*.png"))) if d.is_dir() else 0


def _prepare_dir(path, manifest, subdirs):
    """Create ``path``; when re-writing, drop the old manifest first (so a
    crash leaves an uncommitted directory) and stale frame folders."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / manifest).unlink(missing_ok=True)
    for sub in subdirs:
        if (path / sub).is_dir():
            shutil.rmtree(path / sub)
    return path


# ---------------------------------------------------------------------------
# episodes


@dataclass(eq=False)
class Episode:
    """A demonstration: camera, trajectory and one RGB-D frame per row.

    ``provenance["kind"]`` is ``"source"``, ``"retargeted"`` or
    ``"double-reprojected"``; derived kinds carry the exact ``motion``.
    ``wrist`` holds opaque wrist-camera references that are copied through.
    """

    id: str
    camera: CameraModel
    trajectory: JointTrajectory
    frames: list
    robot_masks: list | None = None
    provenance: dict = field(default_factory=lambda: {"kind": "source"})
    wrist: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) != len(self.trajectory):
            raise DimensionError(
                f"episode {self.id!r}: trajectory has {len(self.trajectory)} rows "
                f"but there are {len(self.frames)} frames"
            )
        shape = (self.camera.height, self.camera.width)
        for t, f in enumerate(self.frames):
            if f.shape != shape:
                raise DimensionError(f"episode {self.id!r}: frame {t} is {f.shape}, camera is {shape}")
        if self.robot_masks is not None and len(self.robot_masks) != len(self.frames):
            raise DimensionError(
                f"episode {self.id!r}: {len(self.robot_masks)} robot masks for {len(self.frames)} frames"
            )

    def __len__(self):
        return len(self.frames)

    @property
    def motion(self):
        m = self.provenance.get("motion")
        return None if m is None else EgoMotion.from_dict(m)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        masks_equal = (self.robot_masks is None) == (other.robot_masks is None) and (
            self.robot_masks is None
            or all(np.array_equal(a, b) for a, b in zip(self.robot_masks, other.robot_masks))
        )
        return (
            self.id == other.id
            and self.camera == other.camera
            and self.trajectory == other.trajectory
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
            and masks_equal
            and self.provenance == other.provenance
            and list(self.wrist) == list(other.wrist)
            and self.config == other.config
        )


def save_episode(episode, path, jobs=1):
    path = _prepare_dir(path, EPISODE_MANIFEST, ["frames"])
    save_calibration(episode.camera, path / "calibration.json")
    save_trajectory(episode.trajectory, path / "trajectory.csv")
    _write_frames(path, "frames/rgb", [f.rgb for f in episode.frames], jobs)
    _write_frames(path, "frames/depth", [f.depth for f in episode.frames], jobs)
    _write_frames(path, "frames/validity", [f.validity for f in episode.frames], jobs)
    if episode.robot_masks is not None:
        _write_frames(path, "frames/robot_mask", episode.robot_masks, jobs)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "id": episode.id,
        "num_frames": len(episode),
        "image_size": [episode.camera.width, episode.camera.height],
        "has_robot_mask": episode.robot_masks is not None,
        "provenance": episode.provenance,
        "wrist": list(episode.wrist),
        "config": episode.config,
        "files": _checksums(path, exclude={EPISODE_MANIFEST}),
    }
    write_json(path / EPISODE_MANIFEST, manifest)
    return path


def load_episode(path, jobs=1, verify=True):
    path = Path(path)
    if not (path / EPISODE_MANIFEST).exists():
        raise SchemaError(f"{path} is not an episode directory (no {EPISODE_MANIFEST})")
    m = read_json(path / EPISODE_MANIFEST)
    if m.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema version {m.get('schema_version')!r}, this reader expects {SCHEMA_VERSION}"
        )
    if not (path / "calibration.json").exists():
        raise SchemaError(f"{path}: missing calibration (calibration.json)")
    camera = load_calibration(path / "calibration.json")
    traj = load_trajectory(path / "trajectory.csv")
    n = _count_frames(path / "frames/rgb")
    if len(traj) != n:
        raise DimensionError(f"{path}: trajectory has {len(traj)} rows but there are {n} frames")
    if m.get("num_frames") != n:
        raise SchemaError(f"{path}: manifest lists {m.get('num_frames')} frames, found {n}")
    if verify:
        verify_checksums(path, m.get("files", {}))
    rgb = _read_frames(path, "frames/rgb", n, "rgb", jobs)
    depth = _read_frames(path, "frames/depth", n, "depth", jobs)
    validity = _read_frames(path, "frames/validity", n, "mask", jobs)
    masks = _read_frames(path, "frames/robot_mask", n, "mask", jobs) if m.get("has_robot_mask") else None
    frames = [RgbdFrame(c, d, v) for c, d, v in zip(rgb, depth, validity)]
    return Episode(
        id=m["id"],
        camera=camera,
        trajectory=traj,
        frames=frames,
        robot_masks=masks,
        provenance=m.get("provenance", {}),
        wrist=m.get("wrist", []),
        config=m.get("config", {}),
    )


def is_episode_dir(path):
    return (Path(path) / EPISODE_MANIFEST).is_file()


def list_episodes(root):
    """Episode directories directly under ``root`` (or ``root`` itself), sorted."""
    root = Path(root)
    if is_episode_dir(root):
        return [root]
    if not root.is_dir():
        raise SchemaError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if is_episode_dir(p))


# ---------------------------------------------------------------------------
# conditioning bundles and the repair-model handshake


@dataclass(eq=False)
class ConditioningBundle:
    """Inputs for the external video repair model: hole-filled novel-view
    scene video plus robot video and masks rendered from the new actions."""

    episode_id: str
    motion: EgoMotion
    camera: CameraModel
    scene: list
    robot_rgb: list
    robot_mask: list
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.scene) == len(self.robot_rgb) == len(self.robot_mask)):
            raise DimensionError(
                f"bundle sequences differ in length: scene {len(self.scene)}, "
                f"robot {len(self.robot_rgb)}, mask {len(self.robot_mask)}"
            )

    def __len__(self):
        return len(self.scene)

    def __eq__(self, other):
        if not isinstance(other, ConditioningBundle):
            return NotImplemented
        seq = all(
            len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
            for a, b in (
                (self.scene, other.scene),
                (self.robot_rgb, other.robot_rgb),
                (self.robot_mask, other.robot_mask),
            )
        )
        return (
            seq
            and self.episode_id == other.episode_id
            and self.motion == other.motion
            and self.camera == other.camera
            and self.config == other.config
        )


def save_bundle(bundle, path, jobs=1):
    path = _prepare_dir(path, BUNDLE_MANIFEST, ["scene", "robot_rgb", "robot_mask"])
    _write_frames(path, "scene", bundle.scene, jobs)
    _write_frames(path, "robot_rgb", bundle.robot_rgb, jobs)
    _write_frames(path, "robot_mask", bundle.robot_mask, jobs)
    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "episode_id": bundle.episode_id,
        "motion": bundle.motion.to_dict(),
        "camera": bundle.camera.to_dict(),
        "frame_count": len(bundle),
        "config": bundle.config,
        "files": _checksums(path, exclude={BUNDLE_MANIFEST}),
    }
    write_json(path / BUNDLE_MANIFEST, manifest)
    return path


def load_bundle(path, jobs=1):
    path = Path(path)
    m = read_json(path / BUNDLE_MANIFEST)
    if m.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise SchemaError(f"{path}: bundle format {m.get('format_version')!r}, expected {BUNDLE_FORMAT_VERSION}")
    n = int(m["frame_count"])
    for sub in ("scene", "robot_rgb", "robot_mask"):
        found = _count_frames(path / sub)
        if found != n:
            raise SchemaError(f"{path}: manifest frame count {n}, {sub}/ has {found} frames")
    verify_checksums(path, m["files"])
    return ConditioningBundle(
        episode_id=m["episode_id"],
        motion=EgoMotion.from_dict(m["motion"]),
        camera=CameraModel.from_dict(m["camera"]),
        scene=_read_frames(path, "scene", n, "rgb", jobs),
        robot_rgb=_read_frames(path, "robot_rgb", n, "rgb", jobs),
        robot_mask=_read_frames(path, "robot_mask", n, "mask", jobs),
        config=m.get("config", {}),
    )


def save_repaired(frames, path, repair_model, episode_id=None, jobs=1):
    """Write a repaired video directory: ``frames/`` plus ``repair.json``."""
    path = _prepare_dir(path, REPAIR_MANIFEST, ["frames"])
    _write_frames(path, "frames", frames, jobs)
    write_json(
        path / REPAIR_MANIFEST,
        {
            "repair_model": repair_model,
            "episode_id": episode_id,
            "frame_count": len(frames),
            "files": _checksums(path, exclude={REPAIR_MANIFEST}),
        },
    )
    return path


def load_repaired(path, jobs=1):
    """``(frames, repair_model, episode_id)`` from a repaired video directory.

    A bare directory of PNGs without ``repair.json`` is accepted too, with
    the repair model recorded as ``"unknown"``.
    """
    path = Path(path)
    if (path / REPAIR_MANIFEST).exists():
        m = read_json(path / REPAIR_MANIFEST)
        verify_checksums(path, m.get("files", {}))
        n = int(m["frame_count"])
        found = _count_frames(path / "frames")
        if found != n:
            raise SchemaError(f"{path}: manifest frame count {n}, frames/ has {found}")
        return _read_frames(path, "frames", n, "rgb", jobs), m.get("repair_model", "unknown"), m.get("episode_id")
    d = path / "frames" if (path / "frames").is_dir() else path
    names = sorted(p.name for p in d.glob("*.png"))
    if not names:
        raise SchemaError(f"{path}: no repaired frames found")
    if names != [frame_name(t) for t in range(len(names))]:
        raise SchemaError(f"{path}: frame files must be numbered contiguously from {frame_name(0)}")
    return _read_frames(d, ".", len(names), "rgb", jobs), "unknown", None


IDENTITY_REPAIR = "identity"


def identity_repair(bundle_dir, out_dir, jobs=1):
    """Stand-in for the generative repair model: writes the naive
    composition of the bundle's scene and robot videos."""
    b = load_bundle(bundle_dir, jobs)
    frames = [np.where(m[..., None], r, s) for s, r, m in zip(b.scene, b.robot_rgb, b.robot_mask)]
    return save_repaired(frames, out_dir, IDENTITY_REPAIR, b.episode_id, jobs)


# ---------------------------------------------------------------------------
# training pairs


@dataclass(eq=False)
class TrainingPair:
    """Self-supervised repair example aligned with the source view.

    ``scene``: double-reprojected, robot-masked and hole-filled source frames;
    ``robot_rgb``/``robot_mask``: robot rendered from the original actions;
    ``target``: the source rgb frames.
    """

    episode_id: str
    index: int
    motion: EgoMotion
    scene: list
    robot_rgb: list
    robot_mask: list
    target: list
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        lens = {len(self.scene), len(self.robot_rgb), len(self.robot_mask), len(self.target)}
        if len(lens) != 1:
            raise DimensionError(
                f"pair sequences differ in length: scene {len(self.scene)}, robot {len(self.robot_rgb)}, "
                f"mask {len(self.robot_mask)}, target {len(self.target)}"
            )

    def __len__(self):
        return len(self.target)

    @property
    def name(self):
        return f"{self.episode_id}-pair{self.index:03d}"


def save_training_pair(pair, path, jobs=1):
    path = _prepare_dir(path, PAIR_MANIFEST, ["scene", "robot_rgb", "robot_mask", "target"])
    _write_frames(path, "scene", pair.scene, jobs)
    _write_frames(path, "robot_rgb", pair.robot_rgb, jobs)
    _write_frames(path, "robot_mask", pair.robot_mask, jobs)
    _write_frames(path, "target", pair.target, jobs)
    write_json(
        path / PAIR_MANIFEST,
        {
            "format_version": PAIR_FORMAT_VERSION,
            "episode_id": pair.episode_id,
            "index": pair.index,
            "motion": pair.motion.to_dict(),
            "frame_count": len(pair),
            "config": pair.config,
            "files": _checksums(path, exclude={PAIR_MANIFEST}),
        },
    )
    return path


def load_training_pair(path, jobs=1):
    path = Path(path)
    m = read_json(path / PAIR_MANIFEST)
    if m.get("format_version") != PAIR_FORMAT_VERSION:
        raise SchemaError(f"{path}: pair format {m.get('format_version')!r}, expected {PAIR_FORMAT_VERSION}")
    verify_checksums(path, m["files"])
    n = int(m["frame_count"])
    return TrainingPair(
        episode_id=m["episode_id"],
        index=int(m["index"]),
        motion=EgoMotion.from_dict(m["motion"]),
        scene=_read_frames(path, "scene", n, "rgb", jobs),
        robot_rgb=_read_frames(path, "robot_rgb", n, "rgb", jobs),
        robot_mask=_read_frames(path, "robot_mask", n, "mask", jobs),
        target=_read_frames(path, "target", n, "rgb", jobs),
        config=m.get("config", {}),
    )


def split_train_val(items, seed, ratio=(9, 1)):
    """Shuffle deterministically and split; train gets ``floor(n a / (a + b))``."""
    items = list(items)
    if not items:
        raise DimensionError("cannot split an empty sequence")
    a, b = ratio
    n_train = len(items) * a // (a + b)
    perm = np.random.default_rng(seed).permutation(len(items))
    return [items[i] for i in perm[:n_train]], [items[i] for i in perm[n_train:]]


# ---------------------------------------------------------------------------
# mixing


def parse_ratio(text):
    """``"1:0.5"`` -> ``(Fraction(1), Fraction(1, 2))``. Decimal parts are exact."""
    parts = str(text).split(":")
    if len(parts) != 2:
        raise SchemaError(f"ratio must look like 'standard:generated', got {text!r}")
    try:
        s, g = (Fraction(p.strip()) for p in parts)
    except (ValueError, ZeroDivisionError) as exc:
        raise SchemaError(f"invalid ratio {text!r}") from exc
    if s <= 0 or g < 0:
        raise SchemaError(f"ratio {text!r}: standard part must be > 0 and generated part >= 0")
    return s, g


def generated_count(ratio, n_standard):
    s, g = parse_ratio(ratio)
    return int((g / s) * n_standard // 1)


@dataclass(frozen=True)
class MixManifest:
    """Which episodes make up a policy-training set at a given ratio."""

    entries: tuple  # ((reference, "standard" | "generated"), ...)
    ratio: str
    seed: int

    def group(self, name):
        return [ref for ref, g in self.entries if g == name]

    @property
    def counts(self):
        return {"standard": len(self.group("standard")), "generated": len(self.group("generated"))}

    def validate(self):
        groups = {g for _, g in self.entries}
        if not groups <= {"standard", "generated"}:
            raise SchemaError(f"unknown groups in mix manifest: {sorted(groups - {'standard', 'generated'})}")
        refs = [r for r, _ in self.entries]
        if len(set(refs)) != len(refs):
            raise SchemaError("mix manifest lists an episode more than once")
        c = self.counts
        want = generated_count(self.ratio, c["standard"])
        if c["generated"] != want:
            raise SchemaError(
                f"ratio {self.ratio} with {c['standard']} standard episodes needs {want} generated, "
                f"manifest has {c['generated']}"
            )
        return self

    def to_dict(self):
        return {
            "format_version": MIX_FORMAT_VERSION,
            "ratio": self.ratio,
            "seed": self.seed,
            "counts": self.counts,
            "episodes": [{"ref": r, "group": g} for r, g in self.entries],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != MIX_FORMAT_VERSION:
            raise SchemaError(f"mix manifest format {d.get('format_version')!r}, expected {MIX_FORMAT_VERSION}")
        entries = tuple((e["ref"], e["group"]) for e in d["episodes"])
        return cls(entries, d["ratio"], int(d["seed"])).validate()


def mix_datasets(standard, generated, ratio, seed):
    """Every standard episode plus ``floor(ratio * |standard|)`` generated
    ones, drawn without replacement by ``seed`` and kept in input order."""
    standard = [str(s) for s in standard]
    generated = [str(g) for g in generated]
    need = generated_count(ratio, len(standard))
    if need > len(generated):
        raise ShortfallError(need, len(generated))
    pick = np.sort(np.random.default_rng(seed).permutation(len(generated))[:need])
    entries = tuple((s, "standard") for s in standard) + tuple((generated[i], "generated") for i in pick)
    return MixManifest(entries, str(ratio), int(seed)).validate()


def save_mix_manifest(manifest, path):
    write_json(path, manifest.to_dict())


def load_mix_manifest(path):
    return MixManifest.from_dict(read_json(path))
