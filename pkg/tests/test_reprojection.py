import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egoshift.errors import DimensionError
from egoshift.fixtures import two_plane_frame
from egoshift.geometry import CameraModel, EgoMotion, RigidTransform, camera_relative_transform
from egoshift.reprojection import (
    PointCloud,
    RgbdFrame,
    align_depth_to_rgb,
    apply_mask_with_dilation,
    backproject,
    double_reproject,
    project_zbuffer,
    reproject_frame,
    splat,
)

from .conftest import simple_camera
from .oracles import project_oracle, splat_oracle


def random_frame(rng, H=24, W=32, holes=0.1, zlo=500, zhi=3000):
    rgb = rng.integers(0, 256, (H, W, 3), dtype=np.uint8)
    depth = rng.integers(zlo, zhi, (H, W)).astype(np.uint16)
    depth[rng.random((H, W)) < holes] = 0
    return RgbdFrame(rgb, depth)


# -- alignment and masking ------------------------------------------------------


def test_align_same_resolution_is_unchanged(rng):
    f = random_frame(rng)
    out = align_depth_to_rgb(f)
    assert np.array_equal(out.depth, f.depth)
    assert np.array_equal(out.validity, f.depth > 0)


def test_align_upsamples_by_block_replication():
    depth = np.array([[1, 2], [3, 0]], dtype=np.uint16)
    f = RgbdFrame(np.zeros((4, 4, 3), np.uint8), depth)
    out = align_depth_to_rgb(f)
    oracle = np.zeros((4, 4), np.uint16)
    for i in range(4):
        for j in range(4):
            oracle[i, j] = depth[i // 2, j // 2]
    assert np.array_equal(out.depth, oracle)
    assert np.array_equal(out.validity, oracle > 0)
    assert not out.validity[2:, 2:].any()


def test_align_invalidates_beyond_depth_max():
    cam = CameraModel(10, 10, 2, 2, 4, 4, depth_max=1.0)
    d = np.full((4, 4), 900, np.uint16)
    d[0, 0] = 1001
    out = align_depth_to_rgb(RgbdFrame(np.zeros((4, 4, 3), np.uint8), d), cam)
    assert not out.validity[0, 0] and out.validity.sum() == 15


def test_mask_all_false_is_identity(rng):
    f = random_frame(rng)
    assert apply_mask_with_dilation(f, np.zeros(f.shape, bool), 2) == f


def test_mask_all_true_invalidates_everything(rng):
    f = random_frame(rng)
    out = apply_mask_with_dilation(f, np.ones(f.shape, bool), 2)
    assert not out.validity.any() and not out.rgb.any()


def _dilate_oracle(mask, r):
    H, W = mask.shape
    out = np.zeros_like(mask)
    for y, x in zip(*np.nonzero(mask)):
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if dx * dx + dy * dy <= r * r and 0 <= y + dy < H and 0 <= x + dx < W:
                    out[y + dy, x + dx] = True
    return out


def test_single_pixel_radius_one_is_plus_shaped(rng):
    f = random_frame(rng, holes=0.0)
    m = np.zeros(f.shape, bool)
    m[5, 7] = True
    out = apply_mask_with_dilation(f, m, 1)
    invalid = ~out.validity
    assert invalid.sum() == 5
    assert invalid[5, 6:9].all() and invalid[4:7, 7].all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(0, 2**31 - 1))
def test_dilation_matches_brute_force(r, seed):
    rng = np.random.default_rng(seed)
    f = random_frame(rng, H=16, W=20, holes=0.0)
    m = rng.random(f.shape) < 0.03
    out = apply_mask_with_dilation(f, m, r)
    assert np.array_equal(~out.validity, _dilate_oracle(m, r))


def test_mask_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        apply_mask_with_dilation(random_frame(rng), np.zeros((3, 3), bool))


# -- backprojection -----------------------------------------------------------------


def test_backproject_principal_point():
    cam = CameraModel(50.0, 50.0, 4.0, 3.0, 8, 6)
    d = np.zeros((6, 8), np.uint16)
    d[3, 4] = 1000
    cloud = backproject(RgbdFrame(np.zeros((6, 8, 3), np.uint8), d), cam)
    np.testing.assert_array_equal(cloud.points, [[0.0, 0.0, 1.0]])


def test_backproject_offset_pixel():
    cam = CameraModel(5.0, 5.0, 1.0, 2.0, 8, 6)
    d = np.zeros((6, 8), np.uint16)
    d[2, 6] = 2000
    cloud = backproject(RgbdFrame(np.zeros((6, 8, 3), np.uint8), d), cam)
    np.testing.assert_allclose(cloud.points, [[2.0, 0.0, 2.0]])


def test_backproject_excludes_beyond_depth_max():
    cam = CameraModel(5.0, 5.0, 1.0, 2.0, 8, 6, depth_max=2.0)
    d = np.full((6, 8), 1500, np.uint16)
    n_all = len(backproject(RgbdFrame(np.zeros((6, 8, 3), np.uint8), d), cam))
    d[0, 0] = 2500
    f = RgbdFrame(np.zeros((6, 8, 3), np.uint8), d)
    assert len(backproject(f, cam)) == n_all - 1


# -- splatting -------------------------------------------------------------------


def test_single_point_lands_on_principal_pixel():
    cam = simple_camera(16, 16)
    out = project_zbuffer(PointCloud(np.array([[0.0, 0.0, 1.0]]), np.array([[1.0, 0.5, 0.0]])), cam)
    assert out.validity.sum() == 1 and out.validity[8, 8]
    assert tuple(out.rgb[8, 8]) == (255, 128, 0)
    assert out.depth[8, 8] == 1000


def test_nearer_point_wins():
    cam = simple_camera(16, 16)
    pts = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]])
    cols = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    out = project_zbuffer(PointCloud(pts, cols), cam)
    assert tuple(out.rgb[8, 8]) == (0, 0, 255)
    assert out.depth[8, 8] == 1000


def test_half_pixel_bilinear_weights():
    cam = simple_camera(32, 32, f=10.0)
    # u = 10 X / Z + 16 = 10.5  ->  X = -0.55 at Z = 1; v = 20 -> Y = 0.4
    _, _, w = splat(np.array([[-0.55, 0.4, 1.0]]), np.ones((1, 1)), cam, 1e-3)
    assert w[20, 10] == pytest.approx(0.5, abs=1e-12)
    assert w[20, 11] == pytest.approx(0.5, abs=1e-12)
    assert np.count_nonzero(w) == 2


def _random_cloud(rng, n, cam):
    # points that project around the image, with coincident pixels and depths
    u = rng.uniform(-2, cam.width + 1, n)
    v = rng.uniform(-2, cam.height + 1, n)
    u[: n // 4] = np.rint(u[: n // 4])
    z = rng.choice(np.linspace(0.5, 3.0, 40), n) + rng.choice([0.0, 0.0004, 0.003], n)
    X = (u - cam.cx) * z / cam.fx
    Y = (v - cam.cy) * z / cam.fy
    return np.column_stack([X, Y, z]), rng.random((n, 3))


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 600), st.integers(0, 2**31 - 1))
def test_splat_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    cam = simple_camera(20, 16, f=18.0)
    pts, cols = _random_cloud(rng, n, cam)
    got = splat(pts, cols, cam, cam.depth_scale)
    want = splat_oracle(pts, cols, cam, cam.depth_scale)
    for g, w in zip(got, want):
        assert np.array_equal(g, w)


def test_project_zbuffer_matches_oracle(rng):
    cam = simple_camera(32, 32, f=30.0)
    pts, cols = _random_cloud(rng, 3000, cam)
    out = project_zbuffer(PointCloud(pts, cols), cam)
    rgb, depth, valid = project_oracle(pts, cols, cam)
    assert np.array_equal(out.rgb, rgb) and np.array_equal(out.depth, depth) and np.array_equal(out.validity, valid)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2**31 - 1))
def test_splat_is_order_independent_for_distinct_depths(n, seed):
    rng = np.random.default_rng(seed)
    cam = simple_camera(12, 12, f=10.0)
    pts, cols = _random_cloud(rng, n, cam)
    pts[:, 2] += np.arange(n) * 1e-7  # distinct depths
    perm = rng.permutation(n)
    a = splat(pts, cols, cam, 1e-3)
    b = splat(pts[perm], cols[perm], cam, 1e-3)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_no_valid_pixel_without_weight(rng):
    cam = simple_camera(32, 24, f=25.0)
    pts, cols = _random_cloud(rng, 500, cam)
    color, zmin, w = splat(pts, cols, cam, cam.depth_scale)
    out = project_zbuffer(PointCloud(pts, cols), cam)
    assert np.all(w[out.validity] > 0)
    assert np.all(w[~out.validity] == 0)


# -- reprojection ------------------------------------------------------------------


def test_identity_reprojection_is_exact(rng):
    cam = simple_camera(32, 24, f=25.0)
    f = random_frame(rng, 24, 32)
    out = reproject_frame(f, cam, RigidTransform.identity())
    assert np.array_equal(out.validity, f.validity)
    assert np.array_equal(out.rgb[f.validity], f.rgb[f.validity])
    assert np.array_equal(out.depth, f.depth)


def test_round_trip_depth_within_half_quantum(rng, sim_camera):
    cam = sim_camera.with_resolution(64, 48)
    f = random_frame(rng, 48, 64, holes=0.0)
    out = project_zbuffer(backproject(f, cam), cam)
    assert np.all(np.abs(out.depth.astype(int) - f.depth.astype(int)) * cam.depth_scale <= 0.5 * cam.depth_scale)
    assert np.array_equal(out.rgb, f.rgb)


def test_fronto_parallel_plane_shifts_by_disparity():
    cam = simple_camera(64, 32, f=100.0)
    rgb = np.random.default_rng(0).integers(0, 256, (32, 64, 3), dtype=np.uint8)
    f = RgbdFrame(rgb, np.full((32, 64), 2000, np.uint16))
    dx = 0.1
    out = reproject_frame(f, cam, camera_relative_transform(cam, EgoMotion(dx, 0.0, 0.0)))
    shift = round(cam.fx * dx / 2.0)
    assert shift == 5
    assert np.array_equal(out.rgb[:, : 64 - shift], rgb[:, shift:])
    assert out.validity[:, : 64 - shift].all() and not out.validity[:, 64 - shift :].any()


def test_two_plane_disocclusion_band():
    f, cam = two_plane_frame()
    dx = 0.1
    out = reproject_frame(f, cam, camera_relative_transform(cam, EgoMotion(dx, 0.0, 0.0)))
    u0, v0, w, h = 36, 20, 24, 24
    shift_front, shift_back = cam.fx * dx / 1.0, cam.fx * dx / 2.0
    band = int(round(shift_front - shift_back))
    right = u0 + w - int(round(shift_front))  # first column right of the moved square
    rows = slice(v0, v0 + h)
    assert not out.validity[rows, right : right + band].any()
    assert out.validity[rows, right + band].all()
    assert out.validity[rows, right - 1].all()
    # outside the square's rows only the image border opens up
    assert out.validity[: v0, : 96 - int(round(shift_back))].all()


def test_holes_grow_with_lateral_motion():
    f, cam = two_plane_frame()
    counts = []
    for dx in (0.0, 0.02, 0.05, 0.1, 0.15, 0.2):
        out = reproject_frame(f, cam, camera_relative_transform(cam, EgoMotion(dx, 0.0, 0.0)))
        counts.append(int((~out.validity).sum()))
    assert counts == sorted(counts)
    assert counts[0] == 0 and counts[-1] > counts[1]


# -- double reprojection --------------------------------------------------------------


def test_double_reproject_zero_motion(rng, sim_camera):
    cam = sim_camera.with_resolution(64, 48)
    f = align_depth_to_rgb(random_frame(rng, 48, 64, holes=0.2), cam)
    out = double_reproject(f, cam, EgoMotion())
    assert np.array_equal(out.validity, f.validity)
    assert np.array_equal(out.rgb[f.validity], f.rgb[f.validity])


def _live_sources(points, camera, eps):
    """pixel -> set of point indices whose splat survives the depth test."""
    per_pixel = defaultdict(list)
    for i, (X, Y, Z) in enumerate(points.tolist()):
        u = camera.fx * X / Z + camera.cx
        v = camera.fy * Y / Z + camera.cy
        u = float(round(u)) if abs(u - round(u)) < 1e-6 else u
        v = float(round(v)) if abs(v - round(v)) < 1e-6 else v
        u0, v0 = math.floor(u), math.floor(v)
        a, b = u - u0, v - v0
        for du, dv, w in ((0, 0, (1 - a) * (1 - b)), (1, 0, a * (1 - b)), (0, 1, (1 - a) * b), (1, 1, a * b)):
            x, y = u0 + du, v0 + dv
            if w > 0 and 0 <= x < camera.width and 0 <= y < camera.height:
                per_pixel[(y, x)].append((Z, i))
    out = {}
    for px, lst in per_pixel.items():
        zmin = min(z for z, _ in lst)
        out[px] = {i for z, i in lst if z <= zmin + eps}
    return out


@pytest.mark.parametrize("seed", range(4))
def test_double_reprojection_colors_have_source_provenance(seed, sim_camera):
    """Every valid output color is a blend of the source pixels that reach
    it through both splatting passes, so it lies in their per-channel range."""
    rng = np.random.default_rng(seed)
    cam = sim_camera.with_resolution(48, 36)
    f = align_depth_to_rgb(random_frame(rng, 36, 48, holes=0.1, zlo=800, zhi=2500), cam)
    motion = EgoMotion.from_degrees(*rng.uniform(-0.1, 0.1, 2), rng.uniform(-10, 10))
    T = camera_relative_transform(cam, motion)

    cloud = backproject(f, cam)
    src_pix = list(zip(*np.nonzero(f.validity)))
    first = _live_sources(T.apply(cloud.points), cam, cam.depth_scale)
    novel = reproject_frame(f, cam, T)
    cloud2 = backproject(novel, cam)
    nov_pix = list(zip(*np.nonzero(novel.validity)))
    second = _live_sources(T.inverse().apply(cloud2.points), cam, cam.depth_scale)
    out = double_reproject(f, cam, motion)

    assert set(zip(*np.nonzero(out.validity))) == set(second)
    for px, nov_ids in second.items():
        sources = set()
        for k in nov_ids:
            sources |= first[nov_pix[k]]
        cols = np.array([f.rgb[src_pix[i]] for i in sources])
        got = out.rgb[px]
        assert np.all(got >= cols.min(axis=0)) and np.all(got <= cols.max(axis=0)), px


def test_textured_plane_double_reprojection_psnr():
    from egoshift.fixtures import plane_double_reprojection_psnr

    for _, db, valid_fraction in plane_double_reprojection_psnr(3):
        assert db >= 25.0 and valid_fraction > 0.5
