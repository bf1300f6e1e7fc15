"""Procedural quadruped stand-in with 27 labelled vertex groups.

The layout stage only needs posed vertex clouds whose vertices carry
keypoint-group labels.  This module builds a desk-scale herbivore-shaped
cloud (roughly 2.2 m long, 1.4 m at the withers) so the whole pipeline runs
and is testable without any external asset.  Model frame: X forward, Y left,
Z up, hooves near the ground plane.
"""

from __future__ import annotations

import numpy as np

from .keypoints import HERD27
from .layout import PosedModel

# Rest-pose anatomy, metres in model frame.
ANATOMY = {
    "hoof_lf": (0.60, 0.25, 0.05),
    "hoof_rf": (0.60, -0.25, 0.05),
    "hoof_rb": (-0.60, -0.27, 0.05),
    "hoof_lb": (-0.60, 0.27, 0.05),
    "knee_lf": (0.60, 0.25, 0.55),
    "knee_rf": (0.60, -0.25, 0.55),
    "knee_rb": (-0.62, -0.27, 0.50),
    "knee_lb": (-0.62, 0.27, 0.50),
    "thigh_lf": (0.60, 0.24, 0.95),
    "thigh_rf": (0.60, -0.24, 0.95),
    "thigh_rb": (-0.65, -0.26, 1.00),
    "thigh_lb": (-0.65, 0.26, 1.00),
    "tail_start": (-0.95, 0.0, 1.25),
    "tail_end": (-1.25, 0.0, 0.70),
    "left_eye": (1.45, 0.12, 1.70),
    "right_eye": (1.45, -0.12, 1.70),
    "left_ear_tip": (1.28, 0.13, 2.00),
    "right_ear_tip": (1.28, -0.13, 2.00),
    "left_ear_base": (1.30, 0.10, 1.85),
    "right_ear_base": (1.30, -0.10, 1.85),
    "neck_start": (0.85, 0.0, 1.40),
    "neck_end": (1.25, 0.0, 1.70),
    "nose": (1.70, 0.0, 1.45),
    "skull": (1.40, 0.0, 1.78),
    "body_middle": (0.0, 0.0, 1.20),
    "back_end": (-0.70, 0.0, 1.30),
    "back_front": (0.70, 0.0, 1.35),
}

_LEG_PHASE = {"lf": 0.0, "rb": 0.0, "rf": np.pi, "lb": np.pi}  # diagonal trot pairs
_HEAD_POINTS = (
    "neck_end", "nose", "skull",
    "left_eye", "right_eye",
    "left_ear_tip", "right_ear_tip",
    "left_ear_base", "right_ear_base",
)


def group_number(keypoint_name: str) -> int:
    """Vertex-group label of a keypoint: schema slot + 1."""
    return HERD27.index(keypoint_name) + 1


def _posed_anatomy(phase: float) -> dict[str, np.ndarray]:
    """Anatomy points for one animation phase (radians)."""
    points = {name: np.array(p, dtype=float) for name, p in ANATOMY.items()}
    swing = 0.18
    for leg, leg_phase in _LEG_PHASE.items():
        s = np.sin(phase + leg_phase)
        points[f"hoof_{leg}"][0] += swing * s
        points[f"hoof_{leg}"][2] += max(0.0, 0.08 * s)
        points[f"knee_{leg}"][0] += 0.5 * swing * s
    bob = np.array([0.04 * np.cos(phase), 0.0, 0.06 * np.sin(phase)])
    for name in _HEAD_POINTS:
        points[name] += bob
    points["tail_end"][1] += 0.08 * np.sin(phase + 1.0)
    return points


def _torso_shell(n_points: int, rng: np.random.Generator) -> np.ndarray:
    """Unlabelled filler vertices on an ellipsoidal torso shell."""
    center = np.array([0.0, 0.0, 1.28])
    radii = np.array([0.85, 0.30, 0.36])
    phi = rng.uniform(0.0, 2.0 * np.pi, n_points)
    costheta = rng.uniform(-1.0, 1.0, n_points)
    sintheta = np.sqrt(1.0 - costheta**2)
    dirs = np.stack([sintheta * np.cos(phi), sintheta * np.sin(phi), costheta], axis=1)
    return center + dirs * radii


def build_pose_library(
    n_poses: int = 8,
    seed: int = 0,
    cluster_size: int = 6,
    jitter: float = 0.015,
    torso_points: int = 160,
) -> list[PosedModel]:
    """Deterministic library of posed, labelled vertex clouds.

    Every keypoint group gets `cluster_size` vertices jittered around its
    anatomy point; the jitter pattern is fixed across poses so the cloud
    behaves like one animated mesh.
    """
    if n_poses < 1:
        raise ValueError("need at least one pose")
    rng = np.random.default_rng(seed)
    names = HERD27.keypoint_names
    offsets = rng.uniform(-jitter, jitter, size=(len(names), cluster_size, 3))
    shell = _torso_shell(torso_points, rng)

    library = []
    for k in range(n_poses):
        phase = 2.0 * np.pi * k / n_poses
        points = _posed_anatomy(phase)
        verts = [points[name] + offsets[i] for i, name in enumerate(names)]
        groups = [np.full(cluster_size, i + 1) for i in range(len(names))]
        verts.append(shell)
        groups.append(np.zeros(len(shell), dtype=int))
        library.append(
            PosedModel(vertices=np.concatenate(verts), groups=np.concatenate(groups))
        )
    return library
