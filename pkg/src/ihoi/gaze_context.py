"""Gaze-guided context selection: per-box fixation weights and top-k region choice."""

from __future__ import annotations

import numpy as np

from .core_types import BoundingBox, DetectedInstance, GazeMap, Scene


def _cell_centers(gaze: GazeMap) -> tuple[np.ndarray, np.ndarray]:
    xs = (np.arange(gaze.width) + 0.5) * (gaze.image_width / gaze.width)
    ys = (np.arange(gaze.height) + 0.5) * (gaze.image_height / gaze.height)
    return xs, ys


def gaze_weight(gaze: GazeMap, box: BoundingBox) -> float:
    """Fixation mass inside ``box`` divided by the box pixel area.

    A grid cell counts when its center, mapped to image pixels, lies in the closed box.
    """
    xs, ys = _cell_centers(gaze)
    cols = (xs >= box.x1) & (xs <= box.x2)
    rows = (ys >= box.y1) & (ys <= box.y2)
    if not cols.any() or not rows.any():
        return 0.0
    mass = gaze.values[np.ix_(rows, cols)].sum()
    return float(mass / box.area)


def _candidates(scene: Scene, human: DetectedInstance) -> list[DetectedInstance]:
    return [inst for inst in scene.instances if inst.id != human.id]


def select_regions(scene: Scene, human: DetectedInstance, k: int = 5) -> list[int]:
    """Ids of the ``k`` instances the human fixates most; empty when the gaze map is missing.

    Ties go to the higher detection score, then the lower id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    gaze = scene.gaze_map(human.id)
    if gaze is None:
        return []
    ranked = sorted(
        _candidates(scene, human),
        key=lambda inst: (-gaze_weight(gaze, inst.box), -inst.detection_score, inst.id),
    )
    return [inst.id for inst in ranked[:k]]


def select_regions_by_score(scene: Scene, human: DetectedInstance, k: int = 5) -> list[int]:
    """Ids of the ``k`` highest-scoring detections other than the human, ties to the lower id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(_candidates(scene, human), key=lambda inst: (-inst.detection_score, inst.id))
    return [inst.id for inst in ranked[:k]]


def regions_for(scene: Scene, human: DetectedInstance, mode: str, k: int) -> list[int]:
    if mode == "gazed":
        return select_regions(scene, human, k)
    if mode == "sorted":
        return select_regions_by_score(scene, human, k)
    if mode == "none":
        return []
    raise ValueError(f"unknown region mode {mode!r}")
