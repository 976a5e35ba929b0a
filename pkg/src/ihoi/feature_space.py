"""Per-instance feature vectors ``[class scores | appearance | relative location | pose]``.

All vectors share one layout of length ``num_categories + appearance_dim + 4 + 16``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_types import NUM_JOINTS, BoundingBox, DetectedInstance, PoseJoints

LOCATION_DIM = 4
POSE_DIM = 2 * NUM_JOINTS

POSE_MODES = ("none", "locations", "distances")


@dataclass(frozen=True)
class FeatureLayout:
    num_categories: int
    appearance_dim: int

    @property
    def size(self) -> int:
        return self.num_categories + self.appearance_dim + LOCATION_DIM + POSE_DIM

    @property
    def classes(self) -> slice:
        return slice(0, self.num_categories)

    @property
    def appearance(self) -> slice:
        start = self.num_categories
        return slice(start, start + self.appearance_dim)

    @property
    def location(self) -> slice:
        start = self.num_categories + self.appearance_dim
        return slice(start, start + LOCATION_DIM)

    @property
    def pose(self) -> slice:
        start = self.num_categories + self.appearance_dim + LOCATION_DIM
        return slice(start, start + POSE_DIM)


def relative_location(box: BoundingBox, counterpart: BoundingBox) -> np.ndarray:
    """Box offset ``(l_x, l_y, l_w, l_h)`` w.r.t. ``counterpart``, Faster R-CNN style."""
    cx, cy = box.center
    ccx, ccy = counterpart.center
    return np.array(
        [
            (cx - ccx) / counterpart.width,
            (cy - ccy) / counterpart.height,
            math.log(box.width / counterpart.width),
            math.log(box.height / counterpart.height),
        ]
    )


def pose_distance_vector(
    joints: Optional[PoseJoints], target: BoundingBox, normalizer_width: float
) -> np.ndarray:
    """Joint-to-``target``-center offsets, interleaved ``(dx, dy)`` per joint, divided by the human width.

    Zero unless all eight joints are present.
    """
    if joints is None or not joints.complete:
        return np.zeros(POSE_DIM)
    cx, cy = target.center
    offsets = (joints.as_array() - np.array([cx, cy])) / normalizer_width
    return offsets.ravel()


def pose_location_vector(
    joints: Optional[PoseJoints], image_width: float, image_height: float
) -> np.ndarray:
    """Joint coordinates divided by the image size; the pose-locations ablation."""
    if joints is None or not joints.complete:
        return np.zeros(POSE_DIM)
    return (joints.as_array() / np.array([image_width, image_height])).ravel()


def build_feature(
    instance: DetectedInstance,
    counterpart_box: BoundingBox,
    human_joints: Optional[PoseJoints],
    human_width: float,
    distance_target: BoundingBox,
    pose_mode: str = "distances",
    image_size: Optional[tuple[float, float]] = None,
) -> np.ndarray:
    if pose_mode == "distances":
        pose = pose_distance_vector(human_joints, distance_target, human_width)
    elif pose_mode == "locations":
        if image_size is None:
            raise ValueError("pose_mode='locations' needs image_size")
        pose = pose_location_vector(human_joints, *image_size)
    elif pose_mode == "none":
        pose = np.zeros(POSE_DIM)
    else:
        raise ValueError(f"unknown pose_mode {pose_mode!r}")
    return np.concatenate(
        [
            instance.category_scores,
            instance.appearance,
            relative_location(instance.box, counterpart_box),
            pose,
        ]
    )


def pairwise_embedding(x_h: np.ndarray, x_o: np.ndarray) -> np.ndarray:
    """Difference embedding ``x_h - x_o``: the interaction as a translation from object to human."""
    x_h = np.asarray(x_h, dtype=float)
    x_o = np.asarray(x_o, dtype=float)
    if x_h.shape != x_o.shape:
        raise ValueError(f"feature length mismatch: {x_h.shape} vs {x_o.shape}")
    return x_h - x_o


def human_object_features(
    human: DetectedInstance,
    obj: DetectedInstance,
    pose_mode: str,
    image_size: tuple[float, float],
) -> tuple[np.ndarray, np.ndarray]:
    """``(x_h, x_o)`` for one human-object pair."""
    joints = human.joints
    width = human.box.width
    x_h = build_feature(human, obj.box, joints, width, human.box, pose_mode, image_size)
    x_o = build_feature(obj, human.box, joints, width, obj.box, pose_mode, image_size)
    return x_h, x_o


def region_feature(
    human: DetectedInstance,
    region: DetectedInstance,
    pose_mode: str,
    image_size: tuple[float, float],
) -> np.ndarray:
    """``x_r`` for a context region: located relative to the acting human, pose measured to the region."""
    return build_feature(
        region, human.box, human.joints, human.box.width, region.box, pose_mode, image_size
    )
