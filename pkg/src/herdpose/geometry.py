"""Pinhole cameras, pixel boxes, instance masks, and the maths between them.

Conventions shared by the whole toolkit:

* World frame: right-handed, Z up, ground plane at Z = 0.
* Camera frame: X right, Y down, Z forward along the optical axis.
* Image frame: u right, v down, in pixels.  Integer pixel (i, j) covers the
  half-open square [i, i+1) x [j, j+1); boxes derived from mask pixels use
  inclusive extents, so a single pixel has w = h = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, GeometryError, MissingInstanceError

# Camera-frame depth at or below this is treated as "behind the camera".
BEHIND_CAMERA_EPS = 1e-9
# Orthonormality / unit-norm tolerance for rotations.
ROTATION_TOL = 1e-9


def _as_vec3(value, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise GeometryError(f"{name} must be a 3-vector, got shape {np.shape(value)}")
    if not np.all(np.isfinite(v)):
        raise GeometryError(f"{name} must be finite, got {v!r}")
    return v


def quat_to_matrix(quat) -> np.ndarray:
    """Rotation matrix of a unit quaternion given as (w, x, y, z)."""
    q = np.asarray(quat, dtype=float).reshape(-1)
    if q.shape != (4,):
        raise GeometryError(f"quaternion must have 4 components, got {q.shape}")
    w, x, y, z = q
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def validate_rotation(matrix, tol: float = ROTATION_TOL) -> np.ndarray:
    """Return the matrix if it is a proper rotation, else raise GeometryError."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 3):
        raise GeometryError(f"rotation matrix must be 3x3, got {m.shape}")
    err = np.abs(m @ m.T - np.eye(3)).max()
    if err > tol:
        raise GeometryError(f"matrix is not orthonormal (max deviation {err:.3e})")
    det = np.linalg.det(m)
    if abs(det - 1.0) > tol:
        raise GeometryError(f"matrix is not a proper rotation (det {det:.12f})")
    return m


def matrix_to_quat(matrix, tol: float = ROTATION_TOL) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a proper rotation matrix."""
    m = validate_rotation(matrix, tol=tol)
    t = np.trace(m)
    if t > 0.0:
        s = 2.0 * np.sqrt(t + 1.0)
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    # canonical sign: first nonzero component positive
    for c in q:
        if c != 0.0:
            if c < 0.0:
                q = -q
            break
    return q


def look_at_rotation(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World->camera rotation for a camera at `position` aimed at `target`.

    The optical axis (camera Z) points from position to target; camera X is
    horizontal-right with respect to `up`.  When the axis is (anti)parallel to
    `up`, a fixed fallback reference keeps the result deterministic.
    """
    position = _as_vec3(position, "position")
    target = _as_vec3(target, "target")
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm <= 0.0:
        raise GeometryError("camera position and target coincide")
    z_cam = forward / norm
    ref = _as_vec3(up, "up")
    ref = ref / np.linalg.norm(ref)
    if abs(float(z_cam @ ref)) > 1.0 - 1e-9:
        ref = np.array([1.0, 0.0, 0.0])
    x_cam = np.cross(z_cam, ref)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(z_cam, x_cam)
    return np.stack([x_cam, y_cam, z_cam])


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics bundle; defaults cover a 1080p mock camera."""

    fx: float = 1400.0
    fy: float = 1400.0
    cx: float = 960.0
    cy: float = 540.0
    width: int = 1920
    height: int = 1080


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a world pose.

    `quaternion` is the world->camera rotation as (w, x, y, z).  Use
    :meth:`from_pose` to construct from either a quaternion or a 3x3 matrix.
    """

    position: np.ndarray
    quaternion: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec3(self.position, "position"))
        q = np.asarray(self.quaternion, dtype=float).reshape(-1)
        if q.shape != (4,):
            raise GeometryError(f"quaternion must have 4 components, got {q.shape}")
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > ROTATION_TOL:
            raise GeometryError(f"quaternion is not unit length (norm {norm:.12f})")
        object.__setattr__(self, "quaternion", q / norm)
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise GeometryError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive")

    @classmethod
    def from_pose(cls, position, rotation, intrinsics: Intrinsics = Intrinsics()) -> "CameraModel":
        """Build a camera from a position and a rotation.

        `rotation` may be a (w, x, y, z) quaternion or a 3x3 world->camera
        matrix; matrices are validated for orthonormality and det +1.
        """
        r = np.asarray(rotation, dtype=float)
        quat = matrix_to_quat(r) if r.shape == (3, 3) else r
        return cls(
            position=position,
            quaternion=quat,
            fx=intrinsics.fx,
            fy=intrinsics.fy,
            cx=intrinsics.cx,
            cy=intrinsics.cy,
            width=intrinsics.width,
            height=intrinsics.height,
        )

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


def project(point, cam: CameraModel) -> tuple[float, float, float]:
    """Project a world point through a pinhole camera.

    Returns (u, v, depth) where depth is the camera-frame Z coordinate in
    metres.  (u, v) are returned even when they fall outside the image;
    callers decide whether to clamp or discard.
    """
    p = _as_vec3(point, "point")
    pc = cam.rotation_matrix @ (p - cam.position)
    depth = float(pc[2])
    if depth <= BEHIND_CAMERA_EPS:
        raise BehindCameraError(f"point {p.tolist()} has camera-frame depth {depth:.3e}")
    u = cam.fx * float(pc[0]) / depth + cam.cx
    v = cam.fy * float(pc[1]) / depth + cam.cy
    return u, v, depth


def project_points(points, cam: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection: returns (uv (N,2), depth (N,), in_front (N,) bool).

    Points behind the camera get in_front=False and undefined uv; no error is
    raised.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    pc = (cam.rotation_matrix @ (pts - cam.position).T).T
    depth = pc[:, 2]
    in_front = depth > BEHIND_CAMERA_EPS
    safe = np.where(in_front, depth, 1.0)
    uv = np.empty((len(pts), 2))
    uv[:, 0] = cam.fx * pc[:, 0] / safe + cam.cx
    uv[:, 1] = cam.fy * pc[:, 1] / safe + cam.cy
    return uv, depth, in_front


def unproject(u: float, v: float, depth: float, cam: CameraModel) -> np.ndarray:
    """Invert :func:`project` given the pixel coordinates and known depth."""
    if depth <= BEHIND_CAMERA_EPS:
        raise BehindCameraError(f"depth {depth:.3e} is not in front of the camera")
    pc = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return cam.rotation_matrix.T @ pc + cam.position


def _interval_overlap(a0: float, aw: float, b0: float, bw: float) -> float:
    """Overlap length of [a0, a0+aw] and [b0, b0+bw].

    When one interval contains the other, the inner width is returned
    verbatim, so self-intersection reproduces the area exactly.
    """
    a1 = a0 + aw
    b1 = b0 + bw
    if a1 <= b0 or b1 <= a0:
        return 0.0
    left_is_a = a0 >= b0
    right_is_a = a1 <= b1
    if left_is_a and right_is_a:
        return aw
    if not left_is_a and not right_is_a:
        return bw
    if left_is_a:
        return b1 - a0
    return a1 - b0


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box with top-left corner (x, y) and extent (w, h)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not all(np.isfinite([self.x, self.y, self.w, self.h])):
            raise GeometryError(f"box fields must be finite: {self}")
        if self.w < 0.0 or self.h < 0.0:
            raise GeometryError(f"box extents must be non-negative: w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    def intersection_area(self, other: "PixelBox") -> float:
        iw = _interval_overlap(self.x, self.w, other.x, other.w)
        ih = _interval_overlap(self.y, self.h, other.y, other.h)
        return iw * ih

    def clamped(self, width: float, height: float) -> "PixelBox":
        """Intersection with the frame rectangle [0, width] x [0, height]."""
        x0 = min(max(self.x, 0.0), width)
        y0 = min(max(self.y, 0.0), height)
        x1 = min(max(self.right, 0.0), width)
        y1 = min(max(self.bottom, 0.0), height)
        return PixelBox(x0, y0, max(x1 - x0, 0.0), max(y1 - y0, 0.0))

    def as_xywh(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection-over-union of two boxes; 0 when the union has zero area."""
    inter = a.intersection_area(b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


@dataclass(frozen=True)
class InstanceMask:
    """Per-pixel instance id grid of shape (height, width); 0 is background."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2:
            raise GeometryError(f"mask ids must be 2-D, got shape {ids.shape}")
        if not np.issubdtype(ids.dtype, np.integer):
            raise GeometryError(f"mask ids must be integers, got dtype {ids.dtype}")
        if ids.size and ids.min() < 0:
            raise GeometryError("mask ids must be non-negative")
        object.__setattr__(self, "ids", ids)

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    def instance_ids(self) -> np.ndarray:
        """Sorted unique nonzero ids present in the mask."""
        ids = np.unique(self.ids)
        return ids[ids != 0]

    def pixel_count(self, instance_id: int) -> int:
        return int(np.count_nonzero(self.ids == instance_id))


def mask_to_box(mask: InstanceMask, instance_id: int) -> PixelBox:
    """Tightest axis-aligned box containing all pixels of one instance.

    Extents are inclusive: a single pixel at (7, 7) yields a 1x1 box.
    """
    rows, cols = np.nonzero(mask.ids == instance_id)
    if rows.size == 0:
        raise MissingInstanceError(f"instance {instance_id} has no pixels in the mask")
    return PixelBox(
        x=float(cols.min()),
        y=float(rows.min()),
        w=float(cols.max() - cols.min() + 1),
        h=float(rows.max() - rows.min() + 1),
    )
