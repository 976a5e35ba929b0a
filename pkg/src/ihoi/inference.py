"""Triplet scoring and per-scene detection with relevance filtering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core_types import ActionVocabulary, BoundingBox, DetectedInstance, Scene
from .encoding import encode, humans_of, objects_for
from .model import ModelConfig, ModelParams, forward_batch, fuse

DETECT_MODES = ("vcoco", "hico")


@dataclass(frozen=True)
class TripletPrediction:
    scene_id: str
    human_box: BoundingBox
    object_box: Optional[BoundingBox]
    action_role_id: int
    score: float

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "human_box": self.human_box.to_list(),
            "object_box": None if self.object_box is None else self.object_box.to_list(),
            "action_role_id": self.action_role_id,
            "score": self.score,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TripletPrediction":
        obox = obj.get("object_box")
        return cls(
            scene_id=str(obj["scene_id"]),
            human_box=BoundingBox.from_list(obj["human_box"]),
            object_box=None if obox is None else BoundingBox.from_list(obox),
            action_role_id=int(obj["action_role_id"]),
            score=float(obj["score"]),
        )


def save_predictions(predictions: Iterable[TripletPrediction], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps(p.to_json(), separators=(",", ":")))
            fh.write("\n")


def load_predictions(path) -> list[TripletPrediction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(TripletPrediction.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"line {lineno}: bad prediction record ({exc})") from None
    return out


def _fused(params: ModelParams, config: ModelConfig, scene: Scene, pairs) -> tuple[np.ndarray, object]:
    batch = encode(scene, config, pairs)
    scores, _ = forward_batch(params, batch, "eval")
    return fuse(scores, config.fusion_ho_sum, config.use_gaze), scores


def score_pair(
    params: ModelParams,
    config: ModelConfig,
    scene: Scene,
    human: DetectedInstance,
    obj: DetectedInstance,
) -> np.ndarray:
    """Triplet scores ``s_h * s_o * s_a`` for every slot."""
    fused, _ = _fused(params, config, scene, [(human, obj)])
    return human.detection_score * obj.detection_score * fused[0]


def score_human_only(
    params: ModelParams,
    config: ModelConfig,
    scene: Scene,
    human: DetectedInstance,
    vocab: ActionVocabulary,
) -> dict[int, float]:
    """``s_h * s_gaze^a * s_h^a`` for each object-free slot ``a``."""
    _, scores = _fused(params, config, scene, [(human, None)])
    gaze = scores.s_gaze[0] if config.use_gaze else np.ones(len(vocab))
    return {a: float(human.detection_score * gaze[a] * scores.s_h[0, a]) for a in vocab.no_object_slots}


def detect(
    params: ModelParams,
    config: ModelConfig,
    scene: Scene,
    vocab: ActionVocabulary,
    mode: str = "vcoco",
    max_per_pair: int = 10,
    human_category: int = 0,
) -> list[TripletPrediction]:
    """All scored triplets of one (already threshold-filtered) scene.

    ``vcoco`` keeps, per human, slot and relevant category, the best-scoring object;
    ``hico`` keeps up to ``max_per_pair`` relevant objects per human and slot.
    """
    if mode not in DETECT_MODES:
        raise ValueError(f"mode must be one of {DETECT_MODES}")
    out: list[TripletPrediction] = []
    object_slots = vocab.object_slots
    for human in humans_of(scene, human_category):
        objects = objects_for(scene, human, vocab, human_category)
        pairs = [(human, None)] + [(human, o) for o in objects]
        fused, scores = _fused(params, config, scene, pairs)
        gaze = scores.s_gaze[0] if config.use_gaze else np.ones(len(vocab))
        for a in vocab.no_object_slots:
            s = human.detection_score * gaze[a] * scores.s_h[0, a]
            out.append(TripletPrediction(scene.scene_id, human.box, None, a, float(s)))
        if not objects:
            continue
        triplet = np.array([human.detection_score * o.detection_score for o in objects])[:, None] * fused[1:]
        cats = [o.category for o in objects]
        for a in object_slots:
            relevant = vocab[a].relevant_categories
            idx = [i for i, c in enumerate(cats) if c in relevant]
            if not idx:
                continue
            if mode == "vcoco":
                best: dict[int, int] = {}
                for i in idx:
                    c = cats[i]
                    if c not in best or triplet[i, a] > triplet[best[c], a]:
                        best[c] = i
                chosen = [best[c] for c in sorted(best)]
            else:
                chosen = sorted(idx, key=lambda i: -triplet[i, a])[:max_per_pair]
            for i in chosen:
                out.append(TripletPrediction(scene.scene_id, human.box, objects[i].box, a, float(triplet[i, a])))
    return out


def detect_all(
    params: ModelParams,
    config: ModelConfig,
    scenes: Sequence[Scene],
    vocab: ActionVocabulary,
    mode: str = "vcoco",
    max_per_pair: int = 10,
    human_category: int = 0,
) -> list[TripletPrediction]:
    preds = []
    for scene in scenes:
        preds.extend(detect(params, config, scene, vocab, mode, max_per_pair, human_category))
    return preds
