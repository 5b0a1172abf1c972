"""RGB-D reprojection to a new camera pose by z-buffered bilinear splatting.

Each backprojected point lands at continuous pixel coordinates and spreads
its color over the four surrounding pixels with bilinear weights. Per
pixel, only splats within one depth quantum of the nearest splat survive and
are blended by weight. Splats are accumulated in ``(depth, point index,
corner)`` order, so the result does not depend on how the work is split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError
from .geometry import camera_relative_transform

# Projected coordinates this close to an integer are snapped onto it, so a
# point reprojected into its own camera lands exactly on its pixel.
SNAP_TOL = 1e-6


@dataclass(eq=False)
class RgbdFrame:
    """RGB (uint8), stored depth (uint16, 0 = missing) and validity."""

    rgb: np.ndarray
    depth: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb)
        self.depth = np.asarray(self.depth)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.dtype != np.uint8:
            raise DimensionError(f"rgb must be H x W x 3 uint8, got {self.rgb.shape} {self.rgb.dtype}")
        if self.depth.ndim != 2:
            raise DimensionError(f"depth must be 2-D, got shape {self.depth.shape}")
        if self.depth.dtype != np.uint16:
            self.depth = self.depth.astype(np.uint16)
        if self.validity is None:
            self.validity = np.ones(self.rgb.shape[:2], dtype=bool)
            if self.depth.shape == self.rgb.shape[:2]:
                self.validity &= self.depth > 0
        else:
            self.validity = np.asarray(self.validity, dtype=bool)
            if self.validity.shape != self.rgb.shape[:2]:
                raise DimensionError("validity must match rgb dimensions")

    @property
    def shape(self):
        return self.rgb.shape[:2]

    def __eq__(self, other):
        if not isinstance(other, RgbdFrame):
            return NotImplemented
        return (
            np.array_equal(self.rgb, other.rgb)
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.validity, other.validity)
        )


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray  # N x 3 camera frame, meters
    colors: np.ndarray  # N x 3 in [0, 1]

    def __len__(self):
        return len(self.points)


def align_depth_to_rgb(frame, camera=None):
    """Nearest-neighbour resample of depth onto the RGB grid.

    Validity is recomputed: false where depth is 0 or beyond ``depth_max``
    (when a camera is given) and wherever the input validity was false.
    """
    H, W = frame.shape
    depth = frame.depth
    if depth.shape != (H, W):
        Hd, Wd = depth.shape
        rows = (np.arange(H) * Hd) // H
        cols = (np.arange(W) * Wd) // W
        depth = depth[rows[:, None], cols[None, :]]
    valid = frame.validity & (depth > 0)
    if camera is not None:
        valid &= depth.astype(np.float64) * camera.depth_scale <= camera.depth_max
    return RgbdFrame(frame.rgb, depth, valid)


def disc(radius):
    r = int(radius)
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    return x * x + y * y <= r * r


def apply_mask_with_dilation(frame, mask, dilation_radius=2):
    """Zero and invalidate every pixel under ``mask`` dilated by a disc."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frame.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match frame {frame.shape}")
    if dilation_radius > 0 and mask.any():
        mask = ndimage.binary_dilation(mask, structure=disc(dilation_radius))
    rgb = frame.rgb.copy()
    rgb[mask] = 0
    depth = frame.depth.copy()
    if depth.shape == mask.shape:
        depth[mask] = 0
    return RgbdFrame(rgb, depth, frame.validity & ~mask)


def backproject(frame, camera):
    """Valid pixels to camera-frame points: ``z = d s``, ``X = (u - cx) z / fx``."""
    z = frame.depth.astype(np.float64) * camera.depth_scale
    keep = frame.validity & (z > 0) & (z <= camera.depth_max)
    v, u = np.nonzero(keep)
    z = z[v, u]
    X = (u - camera.cx) * z / camera.fx
    Y = (v - camera.cy) * z / camera.fy
    pts = np.column_stack([X, Y, z])
    cols = frame.rgb[v, u].astype(np.float64) / 255.0
    return PointCloud(pts, cols)


def snap(coord):
    r = np.rint(coord)
    return np.where(np.abs(coord - r) < SNAP_TOL, r, coord)


def splat_records(points, camera):
    """Bilinear splats of camera-frame points, in accumulation order.

    Returns ``(pixel, depth, weight, point, corner)`` arrays sorted by pixel,
    then depth, point index and corner. Splats off the image, behind the
    camera, or with zero weight are discarded.
    """
    points = np.asarray(points, dtype=np.float64)
    H, W = camera.height, camera.width
    front = points[:, 2] > 0
    pid = np.flatnonzero(front)
    P = points[front]
    u = snap(camera.fx * P[:, 0] / P[:, 2] + camera.cx)
    v = snap(camera.fy * P[:, 1] / P[:, 2] + camera.cy)
    u0 = np.floor(u)
    v0 = np.floor(v)
    a = u - u0
    b = v - v0
    corners = (
        (0, 0, (1.0 - a) * (1.0 - b)),
        (1, 0, a * (1.0 - b)),
        (0, 1, (1.0 - a) * b),
        (1, 1, a * b),
    )
    pix, dep, wts, src, cor = [], [], [], [], []
    for c, (du, dv, w) in enumerate(corners):
        uu = u0 + du
        vv = v0 + dv
        ok = (w > 0) & (uu >= 0) & (uu < W) & (vv >= 0) & (vv < H)
        pix.append((vv[ok] * W + uu[ok]).astype(np.int64))
        dep.append(P[ok, 2])
        wts.append(w[ok])
        src.append(pid[ok])
        cor.append(np.full(int(ok.sum()), c, dtype=np.int64))
    pix, dep, wts, src, cor = (np.concatenate(x) for x in (pix, dep, wts, src, cor))
    order = np.lexsort((cor, src, dep, pix))
    return pix[order], dep[order], wts[order], src[order], cor[order]


def splat(points, values, camera, depth_epsilon):
    """Z-buffered bilinear splatting of per-point ``values`` (N x C).

    Returns ``(blended values H x W x C, min depth H x W (inf if empty),
    accumulated weight H x W)``.
    """
    values = np.asarray(values, dtype=np.float64)
    H, W = camera.height, camera.width
    C = values.shape[1]
    n_pix = H * W
    pix, dep, wts, src, _ = splat_records(points, camera)
    zmin = np.full(n_pix, np.inf)
    if pix.size:
        first = np.ones(pix.size, dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        zmin[pix[first]] = dep[first]
    live = dep <= zmin[pix] + depth_epsilon
    pix, wts, src = pix[live], wts[live], src[live]
    wsum = np.bincount(pix, weights=wts, minlength=n_pix)
    out = np.zeros((n_pix, C))
    filled = wsum > 0
    for c in range(C):
        acc = np.bincount(pix, weights=wts * values[src, c], minlength=n_pix)
        out[filled, c] = acc[filled] / wsum[filled]
    return out.reshape(H, W, C), zmin.reshape(H, W), wsum.reshape(H, W)


def project_zbuffer(cloud, camera):
    """Splat a colored point cloud into ``camera``; holes are invalid and black."""
    eps = camera.depth_scale  # one stored-depth quantum
    color, zmin, wsum = splat(cloud.points, cloud.colors, camera, eps)
    valid = wsum > 0
    rgb = np.zeros(color.shape, dtype=np.uint8)
    rgb[valid] = np.clip(np.rint(color[valid] * 255.0), 0, 255).astype(np.uint8)
    depth = np.zeros(zmin.shape, dtype=np.uint16)
    depth[valid] = np.clip(np.rint(zmin[valid] / camera.depth_scale), 1, 65535).astype(np.uint16)
    return RgbdFrame(rgb, depth, valid)


def reproject_frame(frame, camera, relative):
    """Backproject, move points by ``relative`` (source cam -> target cam),
    and splat into the target view."""
    cloud = backproject(frame, camera)
    moved = PointCloud(relative.apply(cloud.points), cloud.colors)
    return project_zbuffer(moved, camera)


def double_reproject(frame, camera, motion):
    """Warp to the novel view given by ``motion`` and back again.

    The return pass uses the splatted novel-view depth, so the output is
    aligned with the source but carries the novel view's occlusion holes.
    """
    T01 = camera_relative_transform(camera, motion)
    novel = reproject_frame(frame, camera, T01)
    return reproject_frame(novel, camera, T01.inverse())


def reproject_to_motion(frame, camera, motion):
    return reproject_frame(frame, camera, camera_relative_transform(camera, motion))
