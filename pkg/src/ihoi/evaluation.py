"""Role mAP for triplet detections: IoU, greedy matching and average precision."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core_types import ActionVocabulary, BoundingBox, Scene
from .inference import TripletPrediction, load_predictions

IOU_THRESHOLD = 0.5
REPORT_VERSION = 1


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def average_precision(tp: Sequence[bool], num_gt: int, method: str = "all_point") -> float:
    """AP from a ranked true-positive sequence.

    ``all_point`` integrates the precision envelope over every recall change;
    ``11_point`` averages the envelope at recall 0, 0.1, ..., 1.
    """
    if num_gt <= 0:
        return 0.0
    tp = np.asarray(tp, dtype=float)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / num_gt
    precision = ctp / (ctp + cfp)
    if method == "11_point":
        return float(
            np.mean([precision[recall >= t].max() if np.any(recall >= t) else 0.0 for t in np.linspace(0, 1, 11)])
        )
    if method != "all_point":
        raise ValueError(f"unknown AP method {method!r}")
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass(frozen=True)
class GTEntry:
    scene_id: str
    human_box: BoundingBox
    object_box: Optional[BoundingBox]


def match_predictions(
    predictions: Sequence[TripletPrediction], ground_truth: Sequence[GTEntry], requires_object: bool
) -> list[bool]:
    """Greedy matching in descending score order (ties keep input order).

    Each prediction takes the unmatched same-scene ground truth with the highest
    ``min(IoU_h, IoU_o)`` among those with both IoUs >= 0.5 (human IoU only for
    object-free slots). Returns the TP flag of each prediction in ranked order.
    """
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i].score)
    by_scene = defaultdict(list)
    for j, gt in enumerate(ground_truth):
        by_scene[gt.scene_id].append(j)
    used = [False] * len(ground_truth)
    flags = []
    for i in order:
        pred = predictions[i]
        best, best_j = -1.0, None
        for j in by_scene.get(pred.scene_id, ()):
            if used[j]:
                continue
            gt = ground_truth[j]
            ov = iou(pred.human_box, gt.human_box)
            if requires_object:
                if pred.object_box is None or gt.object_box is None:
                    continue
                ov = min(ov, iou(pred.object_box, gt.object_box))
            if ov >= IOU_THRESHOLD and ov > best:
                best, best_j = ov, j
        if best_j is not None:
            used[best_j] = True
        flags.append(best_j is not None)
    return flags


def match_and_ap(
    predictions: Sequence[TripletPrediction],
    ground_truth: Sequence[GTEntry],
    requires_object: bool = True,
    method: str = "all_point",
) -> float:
    flags = match_predictions(predictions, ground_truth, requires_object)
    return average_precision(flags, len(ground_truth), method)


@dataclass
class EvalReport:
    ap: dict[int, float]
    num_gt: dict[int, int]
    num_predictions: dict[int, int]
    slot_names: dict[int, str]
    mAP_role: float
    splits: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "mAP_role": self.mAP_role,
            "splits": self.splits,
            "slots": [
                {
                    "action_role_id": a,
                    "name": self.slot_names[a],
                    "ap": self.ap.get(a),
                    "num_gt": self.num_gt[a],
                    "num_predictions": self.num_predictions[a],
                }
                for a in sorted(self.slot_names)
            ],
        }

    def table(self) -> str:
        lines = [f"{'slot':<24}{'#gt':>6}{'#pred':>8}{'AP':>9}"]
        for a in sorted(self.slot_names):
            ap = self.ap.get(a)
            ap_s = "-" if ap is None else f"{100 * ap:.2f}"
            lines.append(f"{self.slot_names[a]:<24}{self.num_gt[a]:>6}{self.num_predictions[a]:>8}{ap_s:>9}")
        lines.append(f"{'mAP_role':<38}{100 * self.mAP_role:>9.2f}")
        for name, val in self.splits.items():
            lines.append(f"{name:<38}{100 * val:>9.2f}")
        return "\n".join(lines)


def gt_by_slot(scenes: Iterable[Scene], num_slots: int) -> dict[int, list[GTEntry]]:
    out = {a: [] for a in range(num_slots)}
    for scene in scenes:
        for gt in scene.ground_truth:
            out[gt.action_role_id].append(GTEntry(scene.scene_id, gt.human_box, gt.object_box))
    return out


def evaluate_predictions(
    predictions: Sequence[TripletPrediction],
    scenes: Sequence[Scene],
    vocab: ActionVocabulary,
    rare_threshold: Optional[int] = None,
    train_gt_counts: Optional[dict[int, int]] = None,
    method: str = "all_point",
) -> EvalReport:
    """Per-slot AP and their mean over slots that have ground truth."""
    known = {s.scene_id for s in scenes}
    for p in predictions:
        if p.scene_id not in known:
            raise KeyError(f"prediction references unknown scene {p.scene_id!r}")
    gts = gt_by_slot(scenes, len(vocab))
    preds = defaultdict(list)
    for p in predictions:
        preds[p.action_role_id].append(p)
    ap, counts, npred = {}, {}, {}
    for a, slot in enumerate(vocab.slots):
        counts[a] = len(gts[a])
        npred[a] = len(preds[a])
        if gts[a]:
            ap[a] = match_and_ap(preds[a], gts[a], slot.requires_object, method)
    mean = float(np.mean(list(ap.values()))) if ap else 0.0
    splits = {}
    if rare_threshold is not None:
        ref = train_gt_counts if train_gt_counts is not None else counts
        rare = [v for a, v in ap.items() if ref.get(a, 0) < rare_threshold]
        common = [v for a, v in ap.items() if ref.get(a, 0) >= rare_threshold]
        splits = {
            "full": mean,
            "rare": float(np.mean(rare)) if rare else 0.0,
            "non_rare": float(np.mean(common)) if common else 0.0,
        }
    return EvalReport(ap, counts, npred, {a: s.name for a, s in enumerate(vocab.slots)}, mean, splits)


def evaluate(
    prediction_path,
    scenes: Sequence[Scene],
    vocab: ActionVocabulary,
    rare_threshold: Optional[int] = None,
    train_scenes: Optional[Sequence[Scene]] = None,
    method: str = "all_point",
) -> EvalReport:
    counts = None
    if train_scenes is not None:
        counts = {a: len(v) for a, v in gt_by_slot(train_scenes, len(vocab)).items()}
    return evaluate_predictions(load_predictions(prediction_path), scenes, vocab, rare_threshold, counts, method)


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
