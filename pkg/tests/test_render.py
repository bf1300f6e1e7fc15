import math

import numpy as np
import pytest

from herdpose.errors import GeometryError
from herdpose.geometry import CameraModel
from herdpose.layout import GroundBounds, SceneSpec, generate_scene
from herdpose.render import (
    Ellipsoid,
    RenderedFrame,
    fit_instance_ellipsoids,
    load_depth_grid,
    load_mask_png,
    rasterize,
    save_depth_grid,
    save_mask_png,
)

from conftest import TEST_INTRINSICS
from test_layout import point_instance

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def identity_camera():
    return CameraModel(np.zeros(3), IDENTITY_Q, 120.0, 120.0, 48.0, 48.0, 96, 96)


def sphere(center, radius):
    return Ellipsoid(center=np.asarray(center, float), axes=np.eye(3), radii=np.full(3, radius))


def scene_with_point_instances(positions):
    instances = tuple(point_instance(p, i + 1) for i, p in enumerate(positions))
    return SceneSpec(
        instances=instances,
        cameras=(identity_camera(),),
        bounds=GroundBounds(-50, -50, 50, 50),
        seed=0,
        scale_range=(1.0, 1.0),
    )


# --- rasteriser basics ---

def test_empty_scene_renders_background_only():
    scene = SceneSpec(
        instances=(),
        cameras=(identity_camera(),),
        bounds=GroundBounds(-1, -1, 1, 1),
        seed=0,
        scale_range=(1.0, 1.0),
    )
    frame = rasterize(scene, scene.cameras[0])
    assert not frame.mask.ids.any()
    assert np.isinf(frame.depth).all()


def test_sphere_on_axis_projects_to_disc_at_principal_point():
    cam = identity_camera()
    scene = scene_with_point_instances([(0, 0, 5)])
    primitives = {1: (sphere((0, 0, 5), 0.5),)}
    frame = rasterize(scene, cam, body_primitives=primitives)
    covered = frame.mask.ids == 1
    assert covered.any()
    # analytic silhouette radius of a sphere: fx * r / sqrt(z^2 - r^2)
    radius = cam.fx * 0.5 / math.sqrt(5.0**2 - 0.5**2)
    rows, cols = np.nonzero(covered)
    dist = np.hypot(cols + 0.5 - cam.cx, rows + 0.5 - cam.cy)
    assert dist.max() <= radius + 1.0
    expected_area = math.pi * radius**2
    assert covered.sum() == pytest.approx(expected_area, rel=0.08)
    # every pixel centre strictly inside the silhouette is covered
    inner = np.hypot(
        np.arange(96)[None, :] + 0.5 - cam.cx, np.arange(96)[:, None] + 0.5 - cam.cy
    )
    assert covered[inner <= radius - 1.0].all()


def test_nearer_sphere_wins_zbuffer():
    scene = scene_with_point_instances([(0, 0, 5), (0, 0, 10)])
    primitives = {1: (sphere((0, 0, 5), 0.5),), 2: (sphere((0, 0, 10), 0.5),)}
    frame = rasterize(scene, scene.cameras[0], body_primitives=primitives)
    # the far sphere subtends a smaller angle, so every covered pixel of it
    # is also covered by the near one and must carry the near id
    assert set(np.unique(frame.mask.ids)) == {0, 1}
    assert frame.depth[frame.mask.ids == 1].max() < 5.2


def _brute_force_render(scene, cam, primitives):
    """Independent per-pixel, per-primitive ray caster (scalar math)."""
    ids = np.zeros((cam.height, cam.width), dtype=np.uint16)
    depth = np.full((cam.height, cam.width), np.inf)
    rot_t = cam.rotation_matrix.T
    for row in range(cam.height):
        for col in range(cam.width):
            d_cam = np.array([(col + 0.5 - cam.cx) / cam.fx, (row + 0.5 - cam.cy) / cam.fy, 1.0])
            d_world = rot_t @ d_cam
            for inst in scene.instances:
                for ell in primitives[inst.instance_id]:
                    to_unit = ell.axes / ell.radii[:, None]
                    oe = to_unit @ (cam.position - ell.center)
                    de = to_unit @ d_world
                    a = float(de @ de)
                    b = 2.0 * float(oe @ de)
                    c = float(oe @ oe) - 1.0
                    disc = b * b - 4.0 * a * c
                    if disc < 0.0:
                        continue
                    sq = math.sqrt(disc)
                    t = (-b - sq) / (2.0 * a)
                    if t <= 1e-9:
                        t = (-b + sq) / (2.0 * a)
                    if t <= 1e-9:
                        continue
                    if t < depth[row, col]:
                        depth[row, col] = t
                        ids[row, col] = inst.instance_id
    return ids, depth


def test_rasterize_matches_brute_force_oracle(pose_library):
    scene = generate_scene(
        pose_library,
        n_instances=4,
        bounds=GroundBounds(-6, -6, 6, 6),
        k_cameras=1,
        distance_range=(8.0, 11.0),
        intrinsics=TEST_INTRINSICS,
        seed=31,
    )
    cam = scene.cameras[0]
    primitives = {i.instance_id: fit_instance_ellipsoids(i) for i in scene.instances}
    frame = rasterize(scene, cam, body_primitives=primitives)
    oracle_ids, oracle_depth = _brute_force_render(scene, cam, primitives)
    assert np.array_equal(frame.mask.ids, oracle_ids)
    finite = np.isfinite(oracle_depth)
    assert np.array_equal(np.isfinite(frame.depth), finite)
    assert np.allclose(frame.depth[finite], oracle_depth[finite])


def test_visible_instance_covers_at_least_one_pixel(pose_library):
    for seed in (1, 2, 3, 4):
        scene = generate_scene(
            pose_library,
            n_instances=1,
            bounds=GroundBounds(-3, -3, 3, 3),
            k_cameras=1,
            distance_range=(8.0, 12.0),
            intrinsics=TEST_INTRINSICS,
            seed=seed,
        )
        frame = rasterize(scene, scene.cameras[0])
        assert frame.mask.pixel_count(1) >= 1


def test_fitted_ellipsoids_contain_their_member_centroids(small_scene):
    from herdpose.keypoints import HERD27, group_centroid
    from herdpose.render import _PARTS

    for inst in small_scene.instances:
        ellipsoids = fit_instance_ellipsoids(inst)
        for (name, members, _, _), ell in zip(_PARTS, ellipsoids):
            pts = np.stack([group_centroid(inst, HERD27.index(m) + 1) for m in members])
            assert ell.contains(pts).all(), name


# --- frame invariants and file formats ---

def test_rendered_frame_validates_depth(small_scene):
    frame = rasterize(small_scene, small_scene.cameras[0])
    covered = frame.mask.ids != 0
    assert np.isfinite(frame.depth[covered]).all()
    assert np.isinf(frame.depth[~covered]).all()
    with pytest.raises(GeometryError):
        RenderedFrame(image_id=1, mask=frame.mask, depth=np.full_like(frame.depth, np.inf))


def test_mask_png_roundtrip(tmp_path, small_scene):
    frame = rasterize(small_scene, small_scene.cameras[0])
    path = tmp_path / "mask.png"
    save_mask_png(frame.mask, path)
    back = load_mask_png(path)
    assert back.ids.dtype == np.uint16
    assert np.array_equal(back.ids, frame.mask.ids)


def test_depth_grid_roundtrip_and_header(tmp_path, small_scene):
    frame = rasterize(small_scene, small_scene.cameras[0])
    path = tmp_path / "depth.bin"
    save_depth_grid(frame.depth, path)
    raw = path.read_bytes()
    width = int.from_bytes(raw[0:4], "little")
    height = int.from_bytes(raw[4:8], "little")
    assert (width, height) == (frame.width, frame.height)
    assert len(raw) == 8 + 4 * width * height
    back = load_depth_grid(path)
    assert back.shape == (height, width)
    assert np.allclose(back, frame.depth.astype(np.float32), equal_nan=True)
    assert np.isinf(back[frame.mask.ids == 0]).all()


def test_depth_grid_rejects_truncated_file(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x02\x00\x00\x00\x02\x00\x00\x00\x00\x00")
    with pytest.raises(GeometryError):
        load_depth_grid(path)
