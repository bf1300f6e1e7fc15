import pytest

from herdpose.geometry import Intrinsics
from herdpose.keypoints import annotate_frame
from herdpose.layout import GroundBounds, generate_scene
from herdpose.manifests import DatasetManifest, ImageEntry
from herdpose.quadruped import build_pose_library
from herdpose.render import rasterize

# Desk-scale camera used throughout the tests.
TEST_INTRINSICS = Intrinsics(fx=120.0, fy=120.0, cx=48.0, cy=48.0, width=96, height=96)


@pytest.fixture(scope="session")
def pose_library():
    return build_pose_library(n_poses=3, seed=5, cluster_size=4, torso_points=60)


@pytest.fixture(scope="session")
def small_scene(pose_library):
    return generate_scene(
        pose_library,
        n_instances=6,
        bounds=GroundBounds(-10.0, -10.0, 10.0, 10.0),
        k_cameras=2,
        distance_range=(9.0, 14.0),
        intrinsics=TEST_INTRINSICS,
        seed=9,
    )


def build_mock_dataset(
    pose_library,
    n_scenes: int,
    name: str = "mock",
    n_instances: int = 1,
    seed0: int = 100,
    min_dim: float = 8.0,
    distance_range=(6.0, 13.0),
    bounds=GroundBounds(-4.0, -4.0, 4.0, 4.0),
):
    """Render and annotate n single-camera scenes into one manifest.

    Returns (manifest, masks dict keyed by image id); one scene per image,
    each image tagged with its own video id.
    """
    images, annotations, masks = [], [], {}
    for i in range(n_scenes):
        scene = generate_scene(
            pose_library,
            n_instances=n_instances,
            bounds=bounds,
            k_cameras=1,
            distance_range=distance_range,
            intrinsics=TEST_INTRINSICS,
            seed=seed0 + i,
        )
        image_id = i + 1
        frame = rasterize(scene, scene.cameras[0], image_id=image_id)
        records = annotate_frame(scene, scene.cameras[0], frame, min_dim=min_dim)
        images.append(
            ImageEntry(
                image_id=image_id,
                file_name=f"{name}_{image_id:04d}.png",
                width=frame.width,
                height=frame.height,
                video_id=f"vid{i:04d}",
            )
        )
        annotations.extend(records)
        masks[image_id] = frame.mask
    return DatasetManifest(name=name, images=images, annotations=annotations), masks
