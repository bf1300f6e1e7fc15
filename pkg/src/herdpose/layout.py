"""Procedural scene composition.

Instances are scaled, posed, yawed, and dropped onto the ground plane;
placements whose ground-plane occupancy boxes collide with an earlier
accepted instance are discarded.  Cameras are then aimed at the centroid of
the surviving herd.  Everything is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EmptySceneError, GeometryError
from .geometry import CameraModel, Intrinsics, PixelBox, look_at_rotation
from .keypoints import N_KEYPOINT_GROUPS


@dataclass(frozen=True)
class GroundBounds:
    """Axis-aligned region of the ground plane in world metres."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ConfigurationError(f"degenerate bounds: {self}")


@dataclass(frozen=True)
class PosedModel:
    """One entry of a pose library: a labelled vertex cloud in model frame."""

    vertices: np.ndarray      # (N, 3) metres
    groups: np.ndarray        # (N,) ints; 0 = unlabelled, 1..27 = keypoint group

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        g = np.asarray(self.groups)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ConfigurationError(f"pose vertices must be (N, 3), got {v.shape}")
        if g.shape != (v.shape[0],):
            raise ConfigurationError("one group label per vertex required")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "groups", g.astype(int))

    def missing_groups(self) -> list[int]:
        present = set(np.unique(self.groups).tolist())
        return [g for g in range(1, N_KEYPOINT_GROUPS + 1) if g not in present]


@dataclass(frozen=True)
class SceneInstance:
    """A posed animal stand-in placed in the world.

    Placement is scale, then yaw about world +Z, then translation.
    """

    instance_id: int
    base_vertices: np.ndarray
    group_of_vertex: np.ndarray
    scale: float
    pose_index: int
    yaw: float
    position: np.ndarray

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ConfigurationError(f"instance scale must be positive, got {self.scale}")
        object.__setattr__(self, "base_vertices", np.asarray(self.base_vertices, dtype=float))
        object.__setattr__(self, "group_of_vertex", np.asarray(self.group_of_vertex, dtype=int))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    def yaw_matrix(self) -> np.ndarray:
        c = np.cos(self.yaw)
        s = np.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def placed_vertices(self) -> np.ndarray:
        """World-frame vertex cloud after scale, yaw, and translation."""
        return (self.scale * self.base_vertices) @ self.yaw_matrix().T + self.position

    def ground_box(self) -> PixelBox:
        """Axis-aligned XY footprint of the placed cloud (world metres)."""
        placed = self.placed_vertices()
        x0, y0 = placed[:, 0].min(), placed[:, 1].min()
        x1, y1 = placed[:, 0].max(), placed[:, 1].max()
        return PixelBox(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class SceneSpec:
    """A fully laid-out scene: accepted instances plus aimed cameras."""

    instances: tuple[SceneInstance, ...]
    cameras: tuple[CameraModel, ...]
    bounds: GroundBounds
    seed: int
    scale_range: tuple[float, float]

    def instance(self, instance_id: int) -> SceneInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(f"no instance with id {instance_id}")


def _boxes_collide(a: PixelBox, b: PixelBox) -> bool:
    return a.intersection_area(b) > 0.0


def place_instances(
    pose_library: list[PosedModel],
    n: int,
    bounds: GroundBounds,
    scale_range: tuple[float, float] = (0.8, 1.2),
    rng_seed=0,
) -> list[SceneInstance]:
    """Attempt n placements, discarding any that collide with an earlier one.

    Each attempt draws scale, pose index, yaw, and position independently;
    an attempt is rejected when its ground-plane occupancy box overlaps a
    previously accepted instance's box.  Accepted instances are returned in
    placement order with ids 1, 2, ...; the discard count is n minus the
    returned length.
    """
    if not pose_library:
        raise ConfigurationError("pose library is empty")
    if n < 1:
        raise ConfigurationError(f"instance count must be >= 1, got {n}")
    lo, hi = scale_range
    if not (0.0 < lo <= hi):
        raise ConfigurationError(f"invalid scale range {scale_range}")
    for idx, model in enumerate(pose_library):
        missing = model.missing_groups()
        if missing:
            raise ConfigurationError(f"pose {idx} lacks vertices for keypoint groups {missing}")

    rng = np.random.default_rng(rng_seed)
    accepted: list[SceneInstance] = []
    boxes: list[PixelBox] = []
    for _ in range(n):
        scale = float(rng.uniform(lo, hi))
        pose_index = int(rng.integers(len(pose_library)))
        yaw = float(rng.uniform(0.0, 2.0 * np.pi))
        x = float(rng.uniform(bounds.x_min, bounds.x_max))
        y = float(rng.uniform(bounds.y_min, bounds.y_max))
        model = pose_library[pose_index]
        candidate = SceneInstance(
            instance_id=len(accepted) + 1,
            base_vertices=model.vertices,
            group_of_vertex=model.groups,
            scale=scale,
            pose_index=pose_index,
            yaw=yaw,
            position=np.array([x, y, 0.0]),
        )
        box = candidate.ground_box()
        if any(_boxes_collide(box, other) for other in boxes):
            continue
        accepted.append(candidate)
        boxes.append(box)
    return accepted


def herd_centroid(instances: list[SceneInstance] | tuple[SceneInstance, ...]) -> np.ndarray:
    """3D centroid of all placed vertex clouds pooled together."""
    if not instances:
        raise EmptySceneError("cannot take the centroid of an empty scene")
    return np.concatenate([inst.placed_vertices() for inst in instances]).mean(axis=0)


def place_cameras(
    instances: list[SceneInstance] | tuple[SceneInstance, ...],
    k: int = 3,
    distance_range: tuple[float, float] = (8.0, 30.0),
    rng_seed=0,
    intrinsics: Intrinsics = Intrinsics(),
    elevation_range_deg: tuple[float, float] = (15.0, 90.0),
) -> list[CameraModel]:
    """Sample k aerial viewpoints, each aimed at the herd centroid.

    View directions draw a uniform azimuth and a uniform elevation above the
    horizon; distances are uniform in `distance_range`.
    """
    if not instances:
        raise EmptySceneError("cannot place cameras around an empty scene")
    if k < 1:
        raise ConfigurationError(f"camera count must be >= 1, got {k}")
    lo, hi = distance_range
    if not (0.0 < lo <= hi):
        raise ConfigurationError(f"invalid distance range {distance_range}")

    target = herd_centroid(instances)
    rng = np.random.default_rng(rng_seed)
    cameras = []
    for _ in range(k):
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        elevation = np.deg2rad(rng.uniform(*elevation_range_deg))
        distance = rng.uniform(lo, hi)
        direction = np.array(
            [
                np.cos(elevation) * np.cos(azimuth),
                np.cos(elevation) * np.sin(azimuth),
                np.sin(elevation),
            ]
        )
        position = target + distance * direction
        rotation = look_at_rotation(position, target)
        cameras.append(CameraModel.from_pose(position, rotation, intrinsics))
    return cameras


def generate_scene(
    pose_library: list[PosedModel],
    n_instances: int,
    bounds: GroundBounds,
    k_cameras: int = 3,
    scale_range: tuple[float, float] = (0.8, 1.2),
    distance_range: tuple[float, float] = (8.0, 30.0),
    elevation_range_deg: tuple[float, float] = (15.0, 90.0),
    intrinsics: Intrinsics = Intrinsics(),
    seed: int = 0,
) -> SceneSpec:
    """Placement plus camera rig in one deterministic step."""
    instances = place_instances(
        pose_library, n_instances, bounds, scale_range=scale_range, rng_seed=(seed, 0)
    )
    if not instances:
        raise EmptySceneError("no instance survived placement")
    cameras = place_cameras(
        instances,
        k=k_cameras,
        distance_range=distance_range,
        rng_seed=(seed, 1),
        intrinsics=intrinsics,
        elevation_range_deg=elevation_range_deg,
    )
    return SceneSpec(
        instances=tuple(instances),
        cameras=tuple(cameras),
        bounds=bounds,
        seed=seed,
        scale_range=(float(scale_range[0]), float(scale_range[1])),
    )


def mirror_scene(scene: SceneSpec, group_swap: dict[int, int]) -> SceneSpec:
    """Reflect the whole scene across the world X = 0 plane.

    Vertex group labels are relabelled through `group_swap` (left/right
    partners exchanged) because reflection turns an animal's left side into
    its right.  Cameras mirror so each one images exactly the horizontally
    flipped frame.
    """
    flip = np.array([-1.0, 1.0, 1.0])
    instances = []
    for inst in scene.instances:
        swapped = np.array([group_swap.get(int(g), int(g)) for g in inst.group_of_vertex])
        instances.append(
            SceneInstance(
                instance_id=inst.instance_id,
                base_vertices=inst.base_vertices * flip,
                group_of_vertex=swapped,
                scale=inst.scale,
                pose_index=inst.pose_index,
                yaw=-inst.yaw,
                position=inst.position * flip,
            )
        )
    m_world = np.diag([-1.0, 1.0, 1.0])
    f_cam = np.diag([-1.0, 1.0, 1.0])
    cameras = []
    for cam in scene.cameras:
        rotation = f_cam @ cam.rotation_matrix @ m_world
        cameras.append(
            CameraModel.from_pose(
                cam.position * flip,
                rotation,
                Intrinsics(cam.fx, cam.fy, cam.width - cam.cx, cam.cy, cam.width, cam.height),
            )
        )
    bounds = GroundBounds(-scene.bounds.x_max, scene.bounds.y_min, -scene.bounds.x_min, scene.bounds.y_max)
    return SceneSpec(
        instances=tuple(instances),
        cameras=tuple(cameras),
        bounds=bounds,
        seed=scene.seed,
        scale_range=scene.scale_range,
    )


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "bounds": {
            "x_min": scene.bounds.x_min,
            "y_min": scene.bounds.y_min,
            "x_max": scene.bounds.x_max,
            "y_max": scene.bounds.y_max,
        },
        "seed": scene.seed,
        "scale_range": [scene.scale_range[0], scene.scale_range[1]],
        "instances": [
            {
                "id": inst.instance_id,
                "scale": inst.scale,
                "pose_index": inst.pose_index,
                "yaw": inst.yaw,
                "position": inst.position.tolist(),
                "vertices": inst.base_vertices.tolist(),
                "groups": inst.group_of_vertex.tolist(),
            }
            for inst in scene.instances
        ],
        "cameras": [
            {
                "position": cam.position.tolist(),
                "quaternion": cam.quaternion.tolist(),
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "width": cam.width,
                "height": cam.height,
            }
            for cam in scene.cameras
        ],
    }


def scene_from_dict(data: dict) -> SceneSpec:
    try:
        bounds = GroundBounds(
            x_min=float(data["bounds"]["x_min"]),
            y_min=float(data["bounds"]["y_min"]),
            x_max=float(data["bounds"]["x_max"]),
            y_max=float(data["bounds"]["y_max"]),
        )
        instances = tuple(
            SceneInstance(
                instance_id=int(entry["id"]),
                base_vertices=np.array(entry["vertices"], dtype=float),
                group_of_vertex=np.array(entry["groups"], dtype=int),
                scale=float(entry["scale"]),
                pose_index=int(entry["pose_index"]),
                yaw=float(entry["yaw"]),
                position=np.array(entry["position"], dtype=float),
            )
            for entry in data["instances"]
        )
        cameras = tuple(
            CameraModel(
                position=np.array(entry["position"], dtype=float),
                quaternion=np.array(entry["quaternion"], dtype=float),
                fx=float(entry["fx"]),
                fy=float(entry["fy"]),
                cx=float(entry["cx"]),
                cy=float(entry["cy"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
            )
            for entry in data["cameras"]
        )
        scale_range = tuple(float(v) for v in data.get("scale_range", (0.8, 1.2)))
        seed = int(data.get("seed", 0))
    except (KeyError, TypeError, GeometryError) as exc:
        raise ConfigurationError(f"malformed scene document: {exc}") from exc
    return SceneSpec(
        instances=instances, cameras=cameras, bounds=bounds, seed=seed, scale_range=scale_range
    )


def save_scene(scene: SceneSpec, path) -> None:
    """Write the scene as canonical JSON (sorted keys, LF, trailing newline)."""
    text = json.dumps(scene_to_dict(scene), sort_keys=True, indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_scene(path) -> SceneSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"scene file {path} is not valid JSON at offset {exc.pos}: {exc.msg}")
    return scene_from_dict(data)
