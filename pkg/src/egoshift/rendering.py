"""Off-screen software rasterization of robot link meshes.

Pixel ``(u, v)`` samples the image point with integer coordinates
``(u, v)``, the same convention the pinhole backprojection uses. Coverage
uses edge functions with a top-left tie rule, so triangles sharing an edge
never double-cover or leave gaps. The depth buffer stores camera-space z in
meters, interpolated perspective-correctly through 1/z; equal depths keep
the lower triangle index.
"""

from __future__ import annotations

import functools
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .kinematics import link_poses

log = logging.getLogger(__name__)

NEAR_CLIP = 1e-3
LIGHT_DIR = np.array([-0.3, -0.6, -1.0]) / np.linalg.norm([-0.3, -0.6, -1.0])
AMBIENT = 0.35


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # N x 3
    triangles: np.ndarray  # M x 3 int
    colors: np.ndarray | None = None  # N x 3 per-vertex, optional
    dropped: int = 0


@dataclass(eq=False)
class RenderedRobotFrame:
    rgb: np.ndarray  # H x W x 3 uint8, zero off the robot
    mask: np.ndarray  # H x W bool
    depth: np.ndarray  # H x W float64 meters, +inf off the robot
    alpha: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, RenderedRobotFrame):
            return NotImplemented
        return (
            np.array_equal(self.rgb, other.rgb)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.depth, other.depth)
        )


# ---------------------------------------------------------------------------
# mesh loading


def _drop_degenerate(vertices, triangles):
    if len(triangles) == 0:
        return triangles, 0
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    keep = area2 > 0
    return triangles[keep], int((~keep).sum())


def _load_obj(text, where):
    verts, tris = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for p in parts[1:]:
                    i = int(p.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError("face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{where}:{lineno}: malformed OBJ line {line!r} ({exc})") from exc
    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    F = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if F.size and (F.min() < 0 or F.max() >= len(V)):
        raise SchemaError(f"{where}: face index out of range")
    return V, F


def _load_stl(data, where):
    if len(data) >= 84:
        (n,) = struct.unpack_from("<I", data, 80)
        if 84 + 50 * n == len(data):
            rec = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]), count=n, offset=84)
            corners = rec["v"].astype(np.float64)
            return _weld(corners)
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{where}: not a valid binary or ASCII STL") from exc
    if not text.lstrip().startswith("solid"):
        raise SchemaError(f"{where}: not a valid binary or ASCII STL")
    coords = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if parts and parts[0] == "vertex":
            try:
                coords.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise SchemaError(f"{where}:{lineno}: malformed vertex") from exc
    if len(coords) % 3:
        raise SchemaError(f"{where}: vertex count is not a multiple of 3")
    return _weld(np.array(coords, dtype=np.float64).reshape(-1, 3, 3))


def _weld(corners):
    flat = corners.reshape(-1, 3)
    verts, inverse = np.unique(flat, axis=0, return_inverse=True)
    return verts, inverse.reshape(-1, 3).astype(np.int64)


def load_mesh(path):
    """Load an OBJ or STL (binary/ASCII) file as a triangle mesh.

    Polygons are fan-triangulated; zero-area triangles are dropped and
    counted in ``mesh.dropped``.
    """
    return _load_mesh_cached(str(Path(path).resolve()))


@functools.lru_cache(maxsize=256)
def _load_mesh_cached(path):
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"missing mesh file {p}")
    suffix = p.suffix.lower()
    if suffix == ".obj":
        V, F = _load_obj(p.read_text(), p)
    elif suffix == ".stl":
        V, F = _load_stl(p.read_bytes(), p)
    else:
        raise SchemaError(f"{p}: unsupported mesh format {suffix!r}")
    F, dropped = _drop_degenerate(V, F)
    if dropped:
        log.info("%s: dropped %d degenerate triangles", p, dropped)
    V.setflags(write=False)
    F.setflags(write=False)
    return TriangleMesh(V, F, None, dropped)


# ---------------------------------------------------------------------------
# rasterization


def _top_left(ax, ay, bx, by):
    # pixel y grows downward and edges are wound with positive area, so the
    # interior lies right of a left edge (dy < 0) and below a top edge (dx > 0)
    dy = by - ay
    return (dy < 0) | ((dy == 0) & (bx - ax > 0))


def rasterize_triangles(tris, camera, near=NEAR_CLIP):
    """Z-buffer camera-frame triangles ``(M, 3, 3)``.

    Returns ``(depth, tri_index)``: per-pixel camera z in meters (``inf``
    where empty) and the index of the visible triangle (``-1`` where empty).
    Triangles with any vertex at ``z <= near`` are skipped.
    """
    H, W = camera.height, camera.width
    depth = np.full((H, W), np.inf)
    index = np.full((H, W), -1, dtype=np.int64)
    tris = np.asarray(tris, dtype=np.float64)
    for k in range(len(tris)):
        Z = tris[k, :, 2]
        if not np.all(Z > near):
            continue
        xs = camera.fx * tris[k, :, 0] / Z + camera.cx
        ys = camera.fy * tris[k, :, 1] / Z + camera.cy
        x0, y0, z0 = xs[0], ys[0], Z[0]
        x1, y1, z1 = xs[1], ys[1], Z[1]
        x2, y2, z2 = xs[2], ys[2], Z[2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0 or not np.isfinite(area):
            continue
        if area < 0:
            x1, y1, z1, x2, y2, z2 = x2, y2, z2, x1, y1, z1
            area = -area
        u_lo = max(0, int(np.ceil(min(x0, x1, x2))))
        u_hi = min(W - 1, int(np.floor(max(x0, x1, x2))))
        v_lo = max(0, int(np.ceil(min(y0, y1, y2))))
        v_hi = min(H - 1, int(np.floor(max(y0, y1, y2))))
        if u_lo > u_hi or v_lo > v_hi:
            continue
        px = np.arange(u_lo, u_hi + 1, dtype=np.float64)[None, :]
        py = np.arange(v_lo, v_hi + 1, dtype=np.float64)[:, None]
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = (
            ((w0 > 0) | ((w0 == 0) & _top_left(x1, y1, x2, y2)))
            & ((w1 > 0) | ((w1 == 0) & _top_left(x2, y2, x0, y0)))
            & ((w2 > 0) | ((w2 == 0) & _top_left(x0, y0, x1, y1)))
        )
        if not inside.any():
            continue
        inv_z = (w0 / area) / z0 + (w1 / area) / z1 + (w2 / area) / z2
        with np.errstate(divide="ignore"):  # only outside pixels reach 1/0
            z = 1.0 / inv_z
        region = depth[v_lo : v_hi + 1, u_lo : u_hi + 1]
        win = inside & (z < region)
        region[win] = z[win]
        index[v_lo : v_hi + 1, u_lo : u_hi + 1][win] = k
    return depth, index


def shade_triangles(tris, base_colors):
    """Flat Lambert shading: ambient plus one directional light, two-sided."""
    tris = np.asarray(tris, dtype=np.float64)
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    centroid = tris.mean(axis=1)
    facing = np.sum(n * -centroid, axis=1) < 0
    n[facing] = -n[facing]
    lambert = np.clip(n @ LIGHT_DIR, 0.0, 1.0)
    intensity = AMBIENT + (1.0 - AMBIENT) * lambert
    return np.clip(np.asarray(base_colors)[:, :3] * intensity[:, None], 0.0, 1.0)


def robot_triangles(model, config, camera):
    """Camera-frame triangles ``(M, 3, 3)`` and flat colors ``(M, 3)`` of
    every link visual, in model link order."""
    poses = link_poses(model, config)
    tri_list, col_list = [], []
    for name, link in model.links.items():
        if name not in poses:
            continue
        for vis in link.visuals:
            mesh = load_mesh(vis.mesh)
            to_cam = camera.extrinsic @ poses[name] @ vis.origin
            V = to_cam.apply(mesh.vertices * np.asarray(vis.scale))
            tri_list.append(V[mesh.triangles])
            col_list.append(np.tile(np.asarray(vis.color[:3], dtype=np.float64), (len(mesh.triangles), 1)))
    if not tri_list:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    return np.concatenate(tri_list), np.concatenate(col_list)


def _supersampled(camera, k):
    from .geometry import CameraModel

    return CameraModel(
        camera.fx * k, camera.fy * k, camera.cx * k + (k - 1) / 2.0, camera.cy * k + (k - 1) / 2.0,
        camera.width * k, camera.height * k, camera.extrinsic, camera.depth_unit_mm, camera.depth_max,
    )


def rasterize_robot(model, config, camera, supersample=1):
    """Render the robot alone for one trajectory row.

    Mask and depth always come from the single-sample pass; ``supersample``
    > 1 only antialiases the RGB (and fills ``alpha`` with coverage).
    """
    tris, colors = robot_triangles(model, config, camera)
    depth, index = rasterize_triangles(tris, camera)
    mask = index >= 0
    shaded = shade_triangles(tris, colors) if len(tris) else np.zeros((0, 3))
    rgb = np.zeros((camera.height, camera.width, 3), dtype=np.uint8)
    alpha = None
    if supersample <= 1:
        rgb[mask] = np.rint(shaded[index[mask]] * 255.0).astype(np.uint8)
    else:
        k = int(supersample)
        _, idx_hi = rasterize_triangles(tris, _supersampled(camera, k))
        cov = idx_hi >= 0
        col = np.zeros(idx_hi.shape + (3,))
        col[cov] = shaded[idx_hi[cov]]
        H, W = camera.height, camera.width
        cov_sum = cov.reshape(H, k, W, k).sum(axis=(1, 3))
        col_sum = col.reshape(H, k, W, k, 3).sum(axis=(1, 3))
        has = cov_sum > 0
        rgb[has] = np.rint(col_sum[has] / cov_sum[has][:, None] * 255.0).astype(np.uint8)
        alpha = cov_sum / float(k * k)
    return RenderedRobotFrame(rgb, mask, depth, alpha)


def render_robot_video(model, trajectory, camera, jobs=1, supersample=1):
    """One :class:`RenderedRobotFrame` per trajectory row."""
    trajectory.validate(model)
    rows = trajectory.positions

    def one(t):
        return rasterize_robot(model, rows[t], camera, supersample)

    if jobs <= 1:
        return [one(t) for t in range(len(rows))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(len(rows))))
