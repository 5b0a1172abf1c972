"""Hole filling for reprojected frames and naive scene/robot composition."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericalError
from .reprojection import RgbdFrame


def _pull(color, weight):
    """One 2x2 box-filter level: weighted mean color, saturated weight."""
    H, W = weight.shape
    Hp, Wp = H + (H & 1), W + (W & 1)
    c = np.zeros((Hp, Wp, color.shape[2]))
    w = np.zeros((Hp, Wp))
    c[:H, :W] = color
    w[:H, :W] = weight
    wsum = w.reshape(Hp // 2, 2, Wp // 2, 2).sum(axis=(1, 3))
    csum = (c * w[..., None]).reshape(Hp // 2, 2, Wp // 2, 2, -1).sum(axis=(1, 3))
    parent = np.zeros_like(csum)
    has = wsum > 0
    parent[has] = csum[has] / wsum[has][:, None]
    return parent, np.minimum(wsum, 1.0)


def _upsample(coarse, shape):
    """Bilinear upsample by 2 (half-pixel centres, edge clamp) to ``shape``."""
    H, W = shape
    h, w = coarse.shape[:2]

    def taps(n, m):
        x = (np.arange(n) + 0.5) / 2.0 - 0.5
        lo = np.floor(x).astype(int)
        f = x - lo
        return np.clip(lo, 0, m - 1), np.clip(lo + 1, 0, m - 1), f

    r0, r1, fy = taps(H, h)
    c0, c1, fx = taps(W, w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = coarse[r0][:, c0] * (1 - fx) + coarse[r0][:, c1] * fx
    bot = coarse[r1][:, c0] * (1 - fx) + coarse[r1][:, c1] * fx
    return top * (1 - fy) + bot * fy


def pull_push(color, valid):
    """Multiscale fill of invalid pixels from valid ones (float output)."""
    color = np.asarray(color, dtype=np.float64)
    weight = np.asarray(valid, dtype=np.float64)
    levels = [(color, weight)]
    while levels[-1][1].shape[0] > 1 or levels[-1][1].shape[1] > 1:
        levels.append(_pull(*levels[-1]))
    filled = levels[-1][0]
    for c, w in reversed(levels[:-1]):
        up = _upsample(filled, w.shape)
        filled = w[..., None] * c + (1.0 - w[..., None]) * up
    return filled


def _nearest_valid_index(valid, axis, reverse):
    """Index of the nearest valid pixel along ``axis`` on one side (-1 if none)."""
    v = np.moveaxis(valid, axis, -1)
    n = v.shape[-1]
    if reverse:
        v = v[..., ::-1]
    idx = np.where(v, np.arange(n), -1)
    idx = np.maximum.accumulate(idx, axis=-1)
    if reverse:
        idx = np.where(idx >= 0, n - 1 - idx, -1)[..., ::-1]
    return np.moveaxis(idx, -1, axis)


def _cross_range(rgb, valid):
    """Per-channel min/max over the nearest valid pixel left, right, above
    and below each pixel. Pixels with no such neighbour get the empty range
    ``(inf, -inf)``, which callers treat as unbounded."""
    H, W, C = rgb.shape
    lo = np.full((H, W, C), np.inf)
    hi = np.full((H, W, C), -np.inf)
    rows = np.arange(H)[:, None]
    cols = np.arange(W)[None, :]
    for axis in (0, 1):
        for reverse in (False, True):
            idx = _nearest_valid_index(valid, axis, reverse)
            has = idx >= 0
            safe = np.where(has, idx, 0)
            vals = rgb[safe, cols] if axis == 0 else rgb[rows, safe]
            vals = vals.astype(np.float64)
            lo = np.where(has[..., None], np.minimum(lo, vals), lo)
            hi = np.where(has[..., None], np.maximum(hi, vals), hi)
    return lo, hi


def hole_fill(frame):
    """Fill every invalid pixel; valid pixels are left bit-exact.

    Pull-push over a 2x2 box pyramid gives a smooth estimate, which is then
    clamped per channel to the range spanned by the nearest valid pixels
    along the pixel's row and column, so fills never overshoot the hole's
    local boundary.
    """
    valid = frame.validity
    if valid.all():
        return RgbdFrame(frame.rgb.copy(), frame.depth.copy(), valid.copy())
    if not valid.any():
        raise NumericalError("cannot fill a frame with no valid pixels")
    est = pull_push(frame.rgb, valid)
    lo, hi = _cross_range(frame.rgb, valid)
    bounded = np.isfinite(lo)
    est = np.where(bounded, np.minimum(np.maximum(est, lo), hi), est)
    rgb = frame.rgb.copy()
    holes = ~valid
    rgb[holes] = np.clip(np.rint(est[holes]), 0, 255).astype(np.uint8)
    return RgbdFrame(rgb, frame.depth.copy(), np.ones_like(valid))


def naive_compose(scene, robot):
    """Robot pixels where the robot mask is set, scene pixels elsewhere."""
    scene_rgb = scene.rgb if isinstance(scene, RgbdFrame) else np.asarray(scene)
    if scene_rgb.shape != robot.rgb.shape or robot.mask.shape != scene_rgb.shape[:2]:
        raise DimensionError(f"scene {scene_rgb.shape} and robot {robot.rgb.shape} differ in size")
    return np.where(robot.mask[..., None], robot.rgb, scene_rgb)
