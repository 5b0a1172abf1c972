"""Slow, independent reference implementations used as test oracles."""

import math
from collections import defaultdict

import numpy as np


def splat_oracle(points, values, camera, eps):
    """Per-pixel brute force: gather every bilinear splat, keep those within
    ``eps`` of the nearest, blend in (depth, point, corner) order."""
    H, W = camera.height, camera.width
    per_pixel = defaultdict(list)
    for i, (X, Y, Z) in enumerate(np.asarray(points, dtype=float).tolist()):
        if not Z > 0:
            continue
        u = camera.fx * X / Z + camera.cx
        v = camera.fy * Y / Z + camera.cy
        if abs(u - round(u)) < 1e-6:
            u = float(round(u))
        if abs(v - round(v)) < 1e-6:
            v = float(round(v))
        u0, v0 = math.floor(u), math.floor(v)
        a, b = u - u0, v - v0
        for c, (du, dv, w) in enumerate(
            ((0, 0, (1.0 - a) * (1.0 - b)), (1, 0, a * (1.0 - b)), (0, 1, (1.0 - a) * b), (1, 1, a * b))
        ):
            x, y = u0 + du, v0 + dv
            if w > 0 and 0 <= x < W and 0 <= y < H:
                per_pixel[(y, x)].append((Z, i, c, w))
    C = np.asarray(values).shape[1]
    color = np.zeros((H, W, C))
    zmin = np.full((H, W), np.inf)
    wsum = np.zeros((H, W))
    for (y, x), splats in per_pixel.items():
        splats.sort()
        z0 = splats[0][0]
        live = [s for s in splats if s[0] <= z0 + eps]
        ws = 0.0
        acc = [0.0] * C
        for _, i, _, w in live:
            ws += w
            for ch in range(C):
                acc[ch] += w * float(values[i][ch])
        zmin[y, x] = z0
        wsum[y, x] = ws
        if ws > 0:
            color[y, x] = [a / ws for a in acc]
    return color, zmin, wsum


def project_oracle(points, colors, camera):
    """Frame produced by z-buffered splatting, via :func:`splat_oracle`."""
    color, zmin, wsum = splat_oracle(points, colors, camera, camera.depth_scale)
    valid = wsum > 0
    rgb = np.zeros(color.shape, dtype=np.uint8)
    rgb[valid] = np.clip(np.rint(color[valid] * 255.0), 0, 255).astype(np.uint8)
    depth = np.zeros(zmin.shape, dtype=np.uint16)
    depth[valid] = np.clip(np.rint(zmin[valid] / camera.depth_scale), 1, 65535).astype(np.uint16)
    return rgb, depth, valid


def raster_oracle(tris, camera, near=1e-3):
    """All pixels x all triangles edge-function test, min depth, lowest
    triangle index on ties."""
    tris = np.asarray(tris, dtype=float)
    H, W = camera.height, camera.width
    py, px = np.mgrid[0:H, 0:W].astype(float)
    best = np.full((H, W), np.inf)
    idx = np.full((H, W), -1)
    if len(tris) == 0:
        return best, idx
    Z = tris[:, :, 2]
    ok = np.all(Z > near, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = camera.fx * tris[:, :, 0] / Z + camera.cx
        ys = camera.fy * tris[:, :, 1] / Z + camera.cy
    area = (xs[:, 1] - xs[:, 0]) * (ys[:, 2] - ys[:, 0]) - (ys[:, 1] - ys[:, 0]) * (xs[:, 2] - xs[:, 0])
    flip = area < 0
    xs, ys, Zs = xs.copy(), ys.copy(), Z.copy()
    for arr in (xs, ys, Zs):
        arr[flip, 1], arr[flip, 2] = arr[flip, 2].copy(), arr[flip, 1].copy()
    area = np.abs(area)
    ok &= (area != 0) & np.isfinite(area)
    allz = np.full((len(tris), H, W), np.inf)

    def tl(ax, ay, bx, by):
        dy = by - ay
        return (dy < 0) | ((dy == 0) & (bx - ax > 0))

    for k in np.flatnonzero(ok):
        x0, x1, x2 = xs[k]
        y0, y1, y2 = ys[k]
        z0, z1, z2 = Zs[k]
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = (
            ((w0 > 0) | ((w0 == 0) & tl(x1, y1, x2, y2)))
            & ((w1 > 0) | ((w1 == 0) & tl(x2, y2, x0, y0)))
            & ((w2 > 0) | ((w2 == 0) & tl(x0, y0, x1, y1)))
        )
        ar = area[k]
        with np.errstate(divide="ignore"):
            z = 1.0 / ((w0 / ar) / z0 + (w1 / ar) / z1 + (w2 / ar) / z2)
        allz[k][inside] = z[inside]
    k = np.argmin(allz, axis=0)
    best = np.take_along_axis(allz, k[None], axis=0)[0]
    idx = np.where(np.isfinite(best), k, -1)
    return best, idx


def ssim_reference(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, L=255.0):
    """Scalar-loop SSIM over every fully contained window (Rec.601 luma)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 3:
        a = 0.299 * a[..., 0] + 0.587 * a[..., 1] + 0.114 * a[..., 2]
        b = 0.299 * b[..., 0] + 0.587 * b[..., 1] + 0.114 * b[..., 2]
    half = (size - 1) / 2.0
    g = [math.exp(-((i - half) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    w = [[gi * gj for gj in g] for gi in g]
    tot = sum(map(sum, w))
    w = [[x / tot for x in row] for row in w]
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    H, W = a.shape
    scores = []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            mx = my = sxx = syy = sxy = 0.0
            for p in range(size):
                for q in range(size):
                    x = a[i + p, j + q]
                    y = b[i + p, j + q]
                    wt = w[p][q]
                    mx += wt * x
                    my += wt * y
            for p in range(size):
                for q in range(size):
                    dx = a[i + p, j + q] - mx
                    dy = b[i + p, j + q] - my
                    wt = w[p][q]
                    sxx += wt * dx * dx
                    syy += wt * dy * dy
                    sxy += wt * dx * dy
            scores.append(((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return sum(scores) / len(scores)


def homogeneous(rotation, translation):
    M = np.eye(4)
    M[:3, :3] = rotation
    M[:3, 3] = translation
    return M


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
