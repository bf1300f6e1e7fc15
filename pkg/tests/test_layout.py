import numpy as np
import pytest

from herdpose.errors import ConfigurationError, EmptySceneError
from herdpose.geometry import iou
from herdpose.layout import (
    GroundBounds,
    SceneInstance,
    generate_scene,
    load_scene,
    place_cameras,
    place_instances,
    save_scene,
    scene_from_dict,
)

from conftest import TEST_INTRINSICS

BIG_FIELD = GroundBounds(-60.0, -60.0, 60.0, 60.0)


def point_instance(position, instance_id=1):
    """Single-vertex stand-in whose cloud centroid equals its position."""
    return SceneInstance(
        instance_id=instance_id,
        base_vertices=np.zeros((1, 3)),
        group_of_vertex=np.zeros(1, dtype=int),
        scale=1.0,
        pose_index=0,
        yaw=0.0,
        position=np.asarray(position, float),
    )


# --- placement ---

def test_single_instance_is_always_accepted(pose_library):
    accepted = place_instances(pose_library, 1, BIG_FIELD, rng_seed=1)
    assert len(accepted) == 1
    assert accepted[0].instance_id == 1


def test_forced_overlap_discards_second_instance(pose_library):
    tiny = GroundBounds(-0.05, -0.05, 0.05, 0.05)  # far smaller than one animal
    accepted = place_instances(pose_library, 2, tiny, rng_seed=4)
    assert len(accepted) == 1
    # oracle: any two placements inside these bounds must collide, because
    # each occupancy box spans well past the bounds in every direction
    a = place_instances(pose_library, 1, tiny, rng_seed=11)[0]
    b = place_instances(pose_library, 1, tiny, rng_seed=12)[0]
    assert iou(a.ground_box(), b.ground_box()) > 0.0


def test_big_herd_is_deterministic_and_bounded(pose_library):
    first = place_instances(pose_library, 250, BIG_FIELD, rng_seed=77)
    second = place_instances(pose_library, 250, BIG_FIELD, rng_seed=77)
    assert 0 < len(first) <= 250
    assert len(first) == len(second)
    for a, b in zip(first, second):
        assert np.array_equal(a.position, b.position)
        assert a.scale == b.scale and a.yaw == b.yaw and a.pose_index == b.pose_index


def test_accepted_boxes_never_collide(pose_library):
    crowded = GroundBounds(-8.0, -8.0, 8.0, 8.0)
    accepted = place_instances(pose_library, 40, crowded, rng_seed=3)
    assert len(accepted) < 40  # the field is small enough to force discards
    boxes = [inst.ground_box() for inst in accepted]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            assert iou(boxes[i], boxes[j]) == 0.0


def test_place_instances_rejects_bad_input(pose_library):
    with pytest.raises(ConfigurationError):
        place_instances([], 5, BIG_FIELD)
    with pytest.raises(ConfigurationError):
        place_instances(pose_library, 0, BIG_FIELD)
    with pytest.raises(ConfigurationError):
        place_instances(pose_library, 5, BIG_FIELD, scale_range=(0.0, 1.0))


def test_pose_library_must_cover_every_group(pose_library):
    broken = pose_library[0]
    partial = type(broken)(vertices=broken.vertices[:10], groups=broken.groups[:10])
    with pytest.raises(ConfigurationError, match="groups"):
        place_instances([partial], 1, BIG_FIELD)


# --- cameras ---

def axis_distance_to(cam, target):
    """Perpendicular distance from the optical axis to a world point."""
    forward = cam.rotation_matrix[2]
    offset = np.asarray(target, float) - cam.position
    return np.linalg.norm(offset - (offset @ forward) * forward)


def test_single_instance_camera_at_requested_distance():
    inst = point_instance((0.0, 0.0, 0.0))
    cams = place_cameras([inst], k=1, distance_range=(10.0, 10.0), rng_seed=2)
    assert len(cams) == 1
    assert np.linalg.norm(cams[0].position) == pytest.approx(10.0)
    assert axis_distance_to(cams[0], (0.0, 0.0, 0.0)) < 1e-9


def test_lookat_target_is_centroid_of_two_instances():
    instances = [point_instance((0, 0, 0), 1), point_instance((2, 0, 0), 2)]
    cams = place_cameras(instances, k=1, distance_range=(5.0, 5.0), rng_seed=8)
    assert axis_distance_to(cams[0], (1.0, 0.0, 0.0)) < 1e-9


def test_cameras_are_distinct_and_reproducible(pose_library):
    accepted = place_instances(pose_library, 3, BIG_FIELD, rng_seed=1)
    first = place_cameras(accepted, k=3, rng_seed=21)
    second = place_cameras(accepted, k=3, rng_seed=21)
    positions = {tuple(c.position) for c in first}
    assert len(positions) == 3
    for a, b in zip(first, second):
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.quaternion, b.quaternion)


def test_place_cameras_rejects_empty_scene():
    with pytest.raises(EmptySceneError):
        place_cameras([], k=1)


def test_every_camera_aims_at_herd_centroid(small_scene):
    cloud = np.concatenate([inst.placed_vertices() for inst in small_scene.instances])
    centroid = cloud.mean(axis=0)
    for cam in small_scene.cameras:
        assert axis_distance_to(cam, centroid) < 1e-6


# --- scene document ---

def test_scene_roundtrip_is_byte_identical(tmp_path, small_scene):
    path = tmp_path / "scene.json"
    save_scene(small_scene, path)
    first = path.read_bytes()
    save_scene(load_scene(path), path)
    assert path.read_bytes() == first


def test_generate_scene_determinism(pose_library, tmp_path):
    kwargs = dict(
        n_instances=12,
        bounds=GroundBounds(-15, -15, 15, 15),
        k_cameras=3,
        intrinsics=TEST_INTRINSICS,
        seed=123,
    )
    a = generate_scene(pose_library, **kwargs)
    b = generate_scene(pose_library, **kwargs)
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    save_scene(a, pa)
    save_scene(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_discard_plus_accepted_matches_attempts(pose_library):
    crowded = GroundBounds(-6.0, -6.0, 6.0, 6.0)
    n = 30
    accepted = place_instances(pose_library, n, crowded, rng_seed=5)
    discarded = n - len(accepted)
    assert discarded >= 0
    assert len(accepted) + discarded == n


def test_malformed_scene_document_rejected():
    with pytest.raises(ConfigurationError):
        scene_from_dict({"instances": []})
