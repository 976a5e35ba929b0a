"""Shared data model: boxes, detections, gaze maps, scenes, and the JSONL scene format."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

JOINT_NAMES = (
    "nose",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_hip",
    "right_hip",
)
NUM_JOINTS = len(JOINT_NAMES)

DEFAULT_NUM_CATEGORIES = 8
DEFAULT_APPEARANCE_DIM = 16
HUMAN_CATEGORY = 0


class SceneFormatError(ValueError):
    """Raised when a scene or vocabulary file violates the documented format."""


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise SceneFormatError(f"box coordinates must be finite, got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise SceneFormatError(f"box must satisfy x1 < x2 and y1 < y2, got {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def to_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise SceneFormatError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class PoseJoints:
    """Eight body joints in a fixed order (see ``JOINT_NAMES``)."""

    positions: tuple[tuple[float, float], ...]
    present: tuple[bool, ...]

    def __post_init__(self):
        if len(self.positions) != NUM_JOINTS or len(self.present) != NUM_JOINTS:
            raise SceneFormatError(f"joints need exactly {NUM_JOINTS} slots")
        for p in self.positions:
            if len(p) != 2 or not all(math.isfinite(v) for v in p):
                raise SceneFormatError(f"joint position must be a finite (x, y) pair, got {p}")

    @property
    def complete(self) -> bool:
        return all(self.present)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)


@dataclass(frozen=True)
class GazeMap:
    """Non-negative fixation density on an ``height x width`` grid spanning the image."""

    height: int
    width: int
    values: np.ndarray
    image_width: float
    image_height: float

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise SceneFormatError("gaze map height and width must be >= 1")
        values = np.asarray(self.values, dtype=float).reshape(self.height, self.width)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise SceneFormatError("gaze map values must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class DetectedInstance:
    id: int
    box: BoundingBox
    detection_score: float
    category_scores: np.ndarray
    appearance: np.ndarray
    joints: Optional[PoseJoints] = None

    def __post_init__(self):
        if not 0.0 <= self.detection_score <= 1.0:
            raise SceneFormatError(f"detection_score must lie in [0, 1], got {self.detection_score}")
        cats = np.asarray(self.category_scores, dtype=float)
        if cats.ndim != 1 or cats.size == 0 or np.any((cats < 0) | (cats > 1)):
            raise SceneFormatError("category_scores must be a non-empty vector in [0, 1]")
        app = np.asarray(self.appearance, dtype=float)
        if app.ndim != 1 or not np.all(np.isfinite(app)):
            raise SceneFormatError("appearance must be a finite vector")
        cats.setflags(write=False)
        app.setflags(write=False)
        object.__setattr__(self, "category_scores", cats)
        object.__setattr__(self, "appearance", app)

    @property
    def category(self) -> int:
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return int(np.argmax(self.category_scores))


@dataclass(frozen=True)
class GroundTruthHOI:
    human_box: BoundingBox
    object_box: Optional[BoundingBox]
    action_role_id: int


@dataclass(frozen=True)
class ActionSlot:
    action: str
    role: str
    requires_object: bool
    relevant_categories: frozenset[int]

    @property
    def name(self) -> str:
        return f"{self.action}-{self.role}" if self.role else self.action


@dataclass(frozen=True)
class ActionVocabulary:
    slots: tuple[ActionSlot, ...]

    def __post_init__(self):
        if len(self.slots) < 1:
            raise SceneFormatError("vocabulary needs at least one action-role slot")
        for slot in self.slots:
            if slot.requires_object != bool(slot.relevant_categories):
                raise SceneFormatError(
                    f"slot {slot.name!r}: relevant_categories must be empty iff requires_object is false"
                )

    def __len__(self) -> int:
        return len(self.slots)

    def __getitem__(self, idx: int) -> ActionSlot:
        return self.slots[idx]

    @property
    def object_slots(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s.requires_object]

    @property
    def no_object_slots(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if not s.requires_object]

    def to_json(self) -> list[dict]:
        return [
            {
                "action": s.action,
                "role": s.role,
                "requires_object": s.requires_object,
                "relevant_categories": sorted(s.relevant_categories),
            }
            for s in self.slots
        ]

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Scene:
    scene_id: str
    image_width: float
    image_height: float
    instances: tuple[DetectedInstance, ...]
    gaze_maps: dict = field(default_factory=dict)
    ground_truth: tuple[GroundTruthHOI, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise SceneFormatError(f"scene {self.scene_id!r}: instance ids must be unique")
        unknown = set(self.gaze_maps) - set(ids)
        if unknown:
            raise SceneFormatError(
                f"scene {self.scene_id!r}: gaze_maps reference unknown instance ids {sorted(unknown)}"
            )

    def instance(self, instance_id: int) -> DetectedInstance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)

    def gaze_map(self, instance_id: int) -> Optional[GazeMap]:
        return self.gaze_maps.get(instance_id)


def is_human(instance: DetectedInstance, human_category: int = HUMAN_CATEGORY) -> bool:
    return instance.category == human_category


def filter_detections(
    scene: Scene, human_thresh: float, object_thresh: float, human_category: int = HUMAN_CATEGORY
) -> Scene:
    """Drop humans scoring below ``human_thresh`` and objects below ``object_thresh``.

    Gaze maps of removed humans are dropped with them; ground truth is untouched.
    """
    kept = []
    for inst in scene.instances:
        thresh = human_thresh if is_human(inst, human_category) else object_thresh
        if inst.detection_score >= thresh:
            kept.append(inst)
    kept_ids = {inst.id for inst in kept}
    gaze = {k: v for k, v in scene.gaze_maps.items() if k in kept_ids}
    return replace(scene, instances=tuple(kept), gaze_maps=gaze)


# ---------------------------------------------------------------------------
# JSON encoding
# ---------------------------------------------------------------------------


def _field(obj: dict, key: str, where: str):
    if key not in obj:
        raise SceneFormatError(f"{where}: missing field {key!r}")
    return obj[key]


def _parse_joints(obj, where: str) -> Optional[PoseJoints]:
    if obj is None:
        return None
    positions = tuple((float(p[0]), float(p[1])) for p in _field(obj, "positions", where))
    present = tuple(bool(p) for p in _field(obj, "present", where))
    return PoseJoints(positions, present)


def _parse_instance(obj: dict, where: str, num_categories: Optional[int], appearance_dim: Optional[int]):
    iid = int(_field(obj, "id", where))
    where = f"{where} instance {iid}"
    cats = _field(obj, "category_scores", where)
    app = _field(obj, "appearance", where)
    if num_categories is not None and len(cats) != num_categories:
        raise SceneFormatError(f"{where}: category_scores has length {len(cats)}, expected {num_categories}")
    if appearance_dim is not None and len(app) != appearance_dim:
        raise SceneFormatError(f"{where}: appearance has length {len(app)}, expected {appearance_dim}")
    try:
        return DetectedInstance(
            id=iid,
            box=BoundingBox.from_list(_field(obj, "box", where)),
            detection_score=float(_field(obj, "detection_score", where)),
            category_scores=np.asarray(cats, dtype=float),
            appearance=np.asarray(app, dtype=float),
            joints=_parse_joints(obj.get("joints"), where),
        )
    except SceneFormatError as exc:
        raise SceneFormatError(f"{where}: {exc}") from None


def scene_from_dict(
    obj: dict, num_categories: Optional[int] = None, appearance_dim: Optional[int] = None
) -> Scene:
    scene_id = str(_field(obj, "scene_id", "scene"))
    where = f"scene {scene_id!r}"
    instances = [
        _parse_instance(inst, where, num_categories, appearance_dim)
        for inst in _field(obj, "instances", where)
    ]
    gaze_maps = {}
    for key, gm in (obj.get("gaze_maps") or {}).items():
        if gm is None:
            gaze_maps[int(key)] = None
            continue
        gaze_maps[int(key)] = GazeMap(
            height=int(gm["height"]),
            width=int(gm["width"]),
            values=np.asarray(gm["values"], dtype=float),
            image_width=float(gm["image_width"]),
            image_height=float(gm["image_height"]),
        )
    gts = []
    for gt in obj.get("ground_truth") or []:
        obox = gt.get("object_box")
        gts.append(
            GroundTruthHOI(
                human_box=BoundingBox.from_list(gt["human_box"]),
                object_box=None if obox is None else BoundingBox.from_list(obox),
                action_role_id=int(gt["action_role_id"]),
            )
        )
    return Scene(
        scene_id=scene_id,
        image_width=float(_field(obj, "image_width", where)),
        image_height=float(_field(obj, "image_height", where)),
        instances=tuple(instances),
        gaze_maps=gaze_maps,
        ground_truth=tuple(gts),
    )


def scene_to_dict(scene: Scene) -> dict:
    def inst_dict(inst: DetectedInstance) -> dict:
        joints = None
        if inst.joints is not None:
            joints = {
                "positions": [list(p) for p in inst.joints.positions],
                "present": list(inst.joints.present),
            }
        return {
            "id": inst.id,
            "box": inst.box.to_list(),
            "detection_score": inst.detection_score,
            "category_scores": inst.category_scores.tolist(),
            "appearance": inst.appearance.tolist(),
            "joints": joints,
        }

    gaze = {}
    for inst in scene.instances:
        gm = scene.gaze_maps.get(inst.id)
        if gm is None:
            if inst.id in scene.gaze_maps:
                gaze[str(inst.id)] = None
            continue
        gaze[str(inst.id)] = {
            "height": gm.height,
            "width": gm.width,
            "values": gm.values.ravel().tolist(),
            "image_width": gm.image_width,
            "image_height": gm.image_height,
        }
    return {
        "scene_id": scene.scene_id,
        "image_width": scene.image_width,
        "image_height": scene.image_height,
        "instances": [inst_dict(i) for i in scene.instances],
        "gaze_maps": gaze,
        "ground_truth": [
            {
                "human_box": gt.human_box.to_list(),
                "object_box": None if gt.object_box is None else gt.object_box.to_list(),
                "action_role_id": gt.action_role_id,
            }
            for gt in scene.ground_truth
        ],
    }


def load_scenes(
    path, num_categories: Optional[int] = None, appearance_dim: Optional[int] = None
) -> list[Scene]:
    """Read a JSONL scene file.

    ``num_categories`` and ``appearance_dim`` enforce the configured vector lengths.
    Errors carry the 1-based line number.
    """
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SceneFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            try:
                scenes.append(scene_from_dict(obj, num_categories, appearance_dim))
            except (SceneFormatError, KeyError, TypeError, ValueError) as exc:
                raise SceneFormatError(f"line {lineno}: {exc}") from None
    return scenes


def save_scenes(scenes: Iterable[Scene], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_dict(scene), separators=(",", ":")))
            fh.write("\n")


def load_vocabulary(path) -> ActionVocabulary:
    with open(path, encoding="utf-8") as fh:
        try:
            items = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"vocabulary: invalid JSON ({exc.msg})") from None
    return vocabulary_from_json(items)


def vocabulary_from_json(items) -> ActionVocabulary:
    if not isinstance(items, list):
        raise SceneFormatError("vocabulary must be a JSON array")
    slots = []
    for k, item in enumerate(items):
        try:
            slots.append(
                ActionSlot(
                    action=str(item["action"]),
                    role=str(item.get("role") or ""),
                    requires_object=bool(item["requires_object"]),
                    relevant_categories=frozenset(int(c) for c in item.get("relevant_categories", [])),
                )
            )
        except KeyError as exc:
            raise SceneFormatError(f"vocabulary entry {k}: missing field {exc}") from None
    return ActionVocabulary(tuple(slots))


def save_vocabulary(vocab: ActionVocabulary, path) -> None:
    Path(path).write_text(json.dumps(vocab.to_json(), indent=2) + "\n", encoding="utf-8")
