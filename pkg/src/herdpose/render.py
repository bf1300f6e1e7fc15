"""Z-buffer ellipsoid rasteriser standing in for a full rendering engine.

Each instance is approximated by a handful of ellipsoids fitted around its
keypoint-group centroids (body, head, neck, tail, four legs).  Ray casting
those against the pinhole camera yields instance masks and depth maps with
the same label topology the annotation and augmentation stages expect from
real renders; no RGB shading is attempted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import GeometryError
from .geometry import BEHIND_CAMERA_EPS, CameraModel, InstanceMask
from .keypoints import HERD27, group_centroid
from .layout import SceneInstance, SceneSpec

# part name, member keypoints, (axis from, axis to), girth as fraction of the primary radius
_PARTS = (
    ("body", ("back_front", "body_middle", "back_end", "neck_start", "tail_start"), ("back_front", "back_end"), 0.50),
    ("head", ("skull", "nose", "left_eye", "right_eye", "left_ear_base", "right_ear_base",
              "left_ear_tip", "right_ear_tip", "neck_end"), ("skull", "nose"), 0.55),
    ("neck", ("neck_start", "neck_end"), ("neck_start", "neck_end"), 0.42),
    ("tail", ("tail_start", "tail_end"), ("tail_start", "tail_end"), 0.22),
    ("leg_lf", ("thigh_lf", "knee_lf", "hoof_lf"), ("thigh_lf", "hoof_lf"), 0.16),
    ("leg_rf", ("thigh_rf", "knee_rf", "hoof_rf"), ("thigh_rf", "hoof_rf"), 0.16),
    ("leg_rb", ("thigh_rb", "knee_rb", "hoof_rb"), ("thigh_rb", "hoof_rb"), 0.16),
    ("leg_lb", ("thigh_lb", "knee_lb", "hoof_lb"), ("thigh_lb", "hoof_lb"), 0.16),
)

_PAD = 1.3
# Member centroids are kept at quadric value <= this, i.e. strictly interior.
_MAX_MEMBER_Q = 0.81


@dataclass(frozen=True)
class Ellipsoid:
    """Oriented ellipsoid: center, orthonormal axis rows, per-axis radii."""

    center: np.ndarray
    axes: np.ndarray
    radii: np.ndarray

    def to_unit(self) -> np.ndarray:
        """Matrix mapping world offsets into the unit-sphere frame."""
        return self.axes / self.radii[:, None]

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        q = ((p - self.center) @ self.to_unit().T) ** 2
        return q.sum(axis=1) <= 1.0


def _orthonormal_triad(axis: np.ndarray) -> np.ndarray:
    ref = np.array([0.0, 0.0, 1.0])
    if abs(float(axis @ ref)) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    a2 = np.cross(axis, ref)
    a2 /= np.linalg.norm(a2)
    a3 = np.cross(axis, a2)
    return np.stack([axis, a2, a3])


def fit_instance_ellipsoids(instance: SceneInstance) -> tuple[Ellipsoid, ...]:
    """Body-part ellipsoids fitted around the instance's group centroids."""
    centroids = {
        name: group_centroid(instance, HERD27.index(name) + 1)
        for part in _PARTS
        for name in part[1]
    }
    ellipsoids = []
    for _, members, (axis_from, axis_to), girth in _PARTS:
        pts = np.stack([centroids[m] for m in members])
        center = pts.mean(axis=0)
        axis = centroids[axis_to] - centroids[axis_from]
        norm = np.linalg.norm(axis)
        axis = axis / norm if norm > 1e-9 else np.array([1.0, 0.0, 0.0])
        axes = _orthonormal_triad(axis)
        proj = (pts - center) @ axes.T
        ext = np.abs(proj).max(axis=0)
        r1 = ext[0] * _PAD + 1e-6
        radii = np.array(
            [r1, max(ext[1] * _PAD, girth * r1), max(ext[2] * _PAD, girth * r1)]
        )
        q = ((proj / radii) ** 2).sum(axis=1).max()
        if q > _MAX_MEMBER_Q:
            radii = radii * np.sqrt(q / _MAX_MEMBER_Q)
        ellipsoids.append(Ellipsoid(center=center, axes=axes, radii=radii))
    return tuple(ellipsoids)


@dataclass
class RenderedFrame:
    """Geometry-derived labels for one camera view.

    `depth` is metres per pixel with +inf background; it may be None for
    frames reconstructed from mask files alone.  `image` optionally carries
    RGB pixels (H, W, 3) for augmentation demos.
    """

    image_id: int
    mask: InstanceMask
    depth: np.ndarray | None = None
    image: np.ndarray | None = None

    def __post_init__(self):
        if self.depth is not None:
            depth = np.asarray(self.depth, dtype=float)
            if depth.shape != self.mask.ids.shape:
                raise GeometryError(
                    f"depth shape {depth.shape} does not match mask {self.mask.ids.shape}"
                )
            covered = self.mask.ids != 0
            if not np.all(np.isfinite(depth[covered])):
                raise GeometryError("depth must be finite wherever the mask is nonzero")
            self.depth = depth
        if self.image is not None and self.image.shape[:2] != self.mask.ids.shape:
            raise GeometryError("image dimensions must match the mask")

    @property
    def width(self) -> int:
        return self.mask.width

    @property
    def height(self) -> int:
        return self.mask.height


def _pixel_rays(cam: CameraModel, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """World-frame ray directions through the given pixel centres, (3, n).

    Directions are scaled so the camera-frame Z component is 1, which makes
    the ray parameter equal to the camera-frame depth of the hit point.
    """
    uu, vv = np.meshgrid(cols + 0.5, rows + 0.5)
    d_cam = np.stack(
        [
            (uu.ravel() - cam.cx) / cam.fx,
            (vv.ravel() - cam.cy) / cam.fy,
            np.ones(uu.size),
        ]
    )
    return cam.rotation_matrix.T @ d_cam


def rasterize(
    scene: SceneSpec,
    cam: CameraModel,
    image_id: int = 0,
    body_primitives: dict[int, tuple[Ellipsoid, ...]] | None = None,
) -> RenderedFrame:
    """Render instance ids and depth for one camera; nearest instance wins.

    `body_primitives` overrides the fitted ellipsoids per instance id; by
    default each instance gets :func:`fit_instance_ellipsoids`.
    """
    height, width = cam.height, cam.width
    depth = np.full((height, width), np.inf)
    ids = np.zeros((height, width), dtype=np.uint16)

    for inst in scene.instances:
        if inst.instance_id > np.iinfo(np.uint16).max:
            raise GeometryError(f"instance id {inst.instance_id} exceeds 16-bit mask range")
        if body_primitives is not None:
            ellipsoids = body_primitives[inst.instance_id]
        else:
            ellipsoids = fit_instance_ellipsoids(inst)
        for ell in ellipsoids:
            sub = _ellipsoid_pixel_range(ell, cam)
            if sub is None:
                continue
            rows, cols = sub
            dirs = _pixel_rays(cam, rows, cols)
            t = _ray_ellipsoid_depth(ell, cam.position, dirs)
            t = t.reshape(len(rows), len(cols))
            hit = np.isfinite(t)
            if not hit.any():
                continue
            window = np.ix_(rows, cols)
            closer = hit & (t < depth[window])
            depth[window] = np.where(closer, t, depth[window])
            region = ids[window]
            region[closer] = inst.instance_id
            ids[window] = region
    return RenderedFrame(image_id=image_id, mask=InstanceMask(ids=ids), depth=depth)


def _ellipsoid_pixel_range(ell: Ellipsoid, cam: CameraModel):
    """Conservative (rows, cols) index arrays covering the projection."""
    pc = cam.rotation_matrix @ (ell.center - cam.position)
    zc = float(pc[2])
    bound = float(ell.radii.max())
    if zc + bound <= BEHIND_CAMERA_EPS:
        return None
    if zc - bound <= BEHIND_CAMERA_EPS:
        rows = np.arange(cam.height)
        cols = np.arange(cam.width)
        return rows, cols
    u = cam.fx * float(pc[0]) / zc + cam.cx
    v = cam.fy * float(pc[1]) / zc + cam.cy
    screen_r = max(cam.fx, cam.fy) * bound / (zc - bound) + 2.0
    col0 = max(int(np.floor(u - screen_r)), 0)
    col1 = min(int(np.ceil(u + screen_r)) + 1, cam.width)
    row0 = max(int(np.floor(v - screen_r)), 0)
    row1 = min(int(np.ceil(v + screen_r)) + 1, cam.height)
    if col0 >= col1 or row0 >= row1:
        return None
    return np.arange(row0, row1), np.arange(col0, col1)


def _ray_ellipsoid_depth(ell: Ellipsoid, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Per-ray depth of the nearest intersection, +inf for misses.

    Ray directions have camera-frame Z = 1, so the returned parameter is the
    camera-frame depth directly.
    """
    to_unit = ell.to_unit()
    oe = to_unit @ (origin - ell.center)
    de = to_unit @ dirs
    a = (de * de).sum(axis=0)
    b = 2.0 * (oe[:, None] * de).sum(axis=0)
    c = float(oe @ oe) - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sq) / (2.0 * a)
    t_far = (-b + sq) / (2.0 * a)
    t = np.where(t_near > BEHIND_CAMERA_EPS, t_near, t_far)
    return np.where(hit & (t > BEHIND_CAMERA_EPS), t, np.inf)


def save_mask_png(mask: InstanceMask, path) -> None:
    """Write the instance mask as a single-channel 16-bit PNG."""
    ids = mask.ids
    if ids.size and ids.max() > np.iinfo(np.uint16).max:
        raise GeometryError("mask ids exceed the 16-bit PNG range")
    Image.fromarray(ids.astype(np.uint16)).save(Path(path), format="PNG")


def load_mask_png(path) -> InstanceMask:
    with Image.open(Path(path)) as im:
        ids = np.asarray(im)
    return InstanceMask(ids=ids.astype(np.uint16))


def save_depth_grid(depth: np.ndarray, path) -> None:
    """Write depth as {width: u32, height: u32} header plus float32 rows, little-endian."""
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise GeometryError(f"depth grid must be 2-D, got shape {depth.shape}")
    height, width = depth.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", width, height))
        fh.write(depth.astype("<f4").tobytes(order="C"))


def load_depth_grid(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise GeometryError(f"depth file {path} is truncated")
    width, height = struct.unpack("<II", raw[:8])
    expected = 8 + 4 * width * height
    if len(raw) != expected:
        raise GeometryError(f"depth file {path} has {len(raw)} bytes, expected {expected}")
    grid = np.frombuffer(raw[8:], dtype="<f4").reshape(height, width)
    return grid.astype(np.float32)
