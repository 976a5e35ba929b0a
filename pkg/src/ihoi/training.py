"""Training triplets, hard negative mining, image-centric batching and the SGD loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .core_types import ActionVocabulary, DetectedInstance, Scene, filter_detections
from .encoding import encode, humans_of, objects_for
from .evaluation import iou
from .gaze_context import regions_for
from .model import (
    BRANCHES,
    FeatureBatch,
    ModelConfig,
    ModelParams,
    backward_batch,
    branch_losses,
    forward_batch,
    trainable_mask,
)
from .neural import OptimizerState, sgd_step

log = logging.getLogger(__name__)

MINING_MODES = ("none", "alternative", "misgroup")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    negative_ratio: float = 2.0
    seed: int = 0
    k_regions: int = 5
    use_pose: str = "distances"
    region_mode: str = "gazed"
    mining: str = "misgroup"
    hidden: int = 64
    dropout: float = 0.5
    fusion_ho_sum: str = "sum"
    human_thresh: float = 0.8
    object_thresh: float = 0.4
    match_iou: float = 0.5
    num_categories: int = 8
    appearance_dim: int = 16
    human_category: int = 0

    def __post_init__(self):
        if self.mining not in MINING_MODES:
            raise ValueError(f"mining must be one of {MINING_MODES}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate, momentum and weight_decay must be non-negative")
        if self.negative_ratio < 0:
            raise ValueError("negative_ratio must be >= 0")

    def model_config(self, num_actions: int) -> ModelConfig:
        return ModelConfig(
            num_categories=self.num_categories,
            appearance_dim=self.appearance_dim,
            num_actions=num_actions,
            hidden=self.hidden,
            dropout=self.dropout,
            pose_mode=self.use_pose,
            region_mode=self.region_mode,
            k_regions=self.k_regions,
            fusion_ho_sum=self.fusion_ho_sum,
        )

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainingTriplet:
    scene_id: str
    human_id: int
    object_id: Optional[int]
    region_ids: tuple[int, ...]
    labels: np.ndarray = field(compare=False)

    @property
    def is_negative(self) -> bool:
        return not np.any(self.labels)


def _best_match(box, candidates: Sequence[DetectedInstance], threshold: float) -> Optional[DetectedInstance]:
    best, best_iou = None, threshold
    for inst in candidates:
        ov = iou(box, inst.box)
        if ov >= best_iou and (best is None or ov > best_iou):
            best, best_iou = inst, ov
    return best


@dataclass
class PositiveResult:
    triplets: list[TrainingTriplet]
    skipped: int


def positive_triplets(
    scene: Scene,
    vocab: ActionVocabulary,
    region_mode: str = "gazed",
    k: int = 5,
    match_iou: float = 0.5,
    human_category: int = 0,
) -> PositiveResult:
    """One multi-label triplet per ground-truth (human, object) pair, matched to detections by IoU.

    A human's object-free actions are merged into each of its pair triplets; humans
    with only object-free actions get a single object-less triplet.
    """
    humans = humans_of(scene, human_category)
    pair_labels: dict[tuple[int, Optional[int]], np.ndarray] = {}
    human_free: dict[int, np.ndarray] = {}
    skipped = 0
    for gt in scene.ground_truth:
        h = _best_match(gt.human_box, humans, match_iou)
        if h is None:
            skipped += 1
            continue
        if not vocab[gt.action_role_id].requires_object or gt.object_box is None:
            human_free.setdefault(h.id, np.zeros(len(vocab)))[gt.action_role_id] = 1.0
            continue
        o = _best_match(gt.object_box, objects_for(scene, h, vocab, human_category), match_iou)
        if o is None:
            skipped += 1
            continue
        pair_labels.setdefault((h.id, o.id), np.zeros(len(vocab)))[gt.action_role_id] = 1.0
    paired_humans = {hid for hid, _ in pair_labels}
    for hid, labels in human_free.items():
        if hid in paired_humans:
            for key in pair_labels:
                if key[0] == hid:
                    pair_labels[key] = np.maximum(pair_labels[key], labels)
        else:
            pair_labels[(hid, None)] = labels
    out = []
    for (hid, oid), labels in pair_labels.items():
        regions = tuple(regions_for(scene, scene.instance(hid), region_mode, k))
        out.append(TrainingTriplet(scene.scene_id, hid, oid, regions, labels))
    return PositiveResult(out, skipped)


def _gt_pairs(scene: Scene):
    return [(gt.human_box, gt.object_box) for gt in scene.ground_truth if gt.object_box is not None]


def _matches_gt_pair(h: DetectedInstance, o: DetectedInstance, gt_pairs, match_iou: float) -> bool:
    return any(iou(h.box, hb) >= match_iou and iou(o.box, ob) >= match_iou for hb, ob in gt_pairs)


def negative_pool(
    scene: Scene,
    positives: Sequence[TrainingTriplet],
    vocab: ActionVocabulary,
    mode: str = "misgroup",
    match_iou: float = 0.5,
    human_category: int = 0,
) -> list[tuple[int, int]]:
    """Candidate ``(human_id, object_id)`` negatives.

    ``misgroup``: every detected pair that matches no ground-truth pair.
    ``alternative``: only pairs whose detections fail on their own, i.e. the human
    is no annotated actor, the object is poorly localized (0 < IoU < 0.5) against
    one of the actor's objects, or the object is unannotated and of a category
    irrelevant to all of the actor's actions. Re-pairings of a real actor with a
    plausible object are left out.
    """
    if mode not in ("misgroup", "alternative"):
        raise ValueError(f"unknown mining mode {mode!r}")
    gt_pairs = _gt_pairs(scene)
    positive_keys = {(t.human_id, t.object_id) for t in positives}
    pool = []
    for h in humans_of(scene, human_category):
        actor_gts = [gt for gt in scene.ground_truth if iou(h.box, gt.human_box) >= match_iou]
        actor_objects = [gt.object_box for gt in actor_gts if gt.object_box is not None]
        actor_cats: set[int] = set()
        for gt in actor_gts:
            actor_cats |= vocab[gt.action_role_id].relevant_categories
        for o in objects_for(scene, h, vocab, human_category):
            if (h.id, o.id) in positive_keys or _matches_gt_pair(h, o, gt_pairs, match_iou):
                continue
            if mode == "alternative" and actor_gts:
                overlaps = [iou(o.box, ob) for ob in actor_objects]
                poorly_localized = any(0.0 < ov < match_iou for ov in overlaps)
                annotated = any(iou(o.box, ob) >= match_iou for _, ob in gt_pairs)
                wrong_class = not annotated and o.category not in actor_cats
                if not (poorly_localized or wrong_class):
                    continue
            pool.append((h.id, o.id))
    return pool


def mine_hard_negatives(
    scene: Scene,
    positives: Sequence[TrainingTriplet],
    ratio: float,
    rng: np.random.Generator,
    vocab: ActionVocabulary,
    mode: str = "misgroup",
    region_mode: str = "gazed",
    k: int = 5,
    match_iou: float = 0.5,
    human_category: int = 0,
) -> list[TrainingTriplet]:
    """Sample ``min(pool, ceil(ratio * #positives))`` negatives with all-zero labels."""
    if ratio < 0:
        raise ValueError("ratio must be >= 0")
    if mode == "none" or ratio == 0:
        return []
    pool = negative_pool(scene, positives, vocab, mode, match_iou, human_category)
    out = []
    for hid, oid in sample_pool(pool, len(positives), ratio, rng):
        regions = tuple(regions_for(scene, scene.instance(hid), region_mode, k))
        out.append(TrainingTriplet(scene.scene_id, hid, oid, regions, np.zeros(len(vocab))))
    return out


def sample_pool(pool: Sequence[tuple[int, int]], num_positives: int, ratio: float, rng: np.random.Generator):
    n = min(len(pool), math.ceil(ratio * num_positives))
    if n == 0:
        return []
    picks = sorted(rng.choice(len(pool), size=n, replace=False).tolist())
    return [pool[i] for i in picks]


@dataclass(frozen=True)
class Batch:
    scene_id: str
    triplets: tuple[TrainingTriplet, ...]


def make_batches(
    groups: dict[str, Sequence[TrainingTriplet]],
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
) -> list[Batch]:
    """Single-scene batches; scene order is shuffled when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(groups)
    if rng is not None:
        order = [order[i] for i in rng.permutation(len(order))]
    batches = []
    for sid in order:
        items = list(groups[sid])
        for start in range(0, len(items), batch_size):
            batches.append(Batch(sid, tuple(items[start : start + batch_size])))
    return batches


def loss_masks(
    triplets: Sequence[TrainingTriplet],
    vocab: ActionVocabulary,
    positives: Optional[Sequence[TrainingTriplet]] = None,
) -> dict[str, np.ndarray]:
    """Which (row, slot) entries each branch learns from.

    Pairwise and object streams see object slots of rows that have an object. The
    human and gaze branches see every slot, except that a mined negative says
    nothing about the human's object-free actions. When ``positives`` (the scene's
    positive triplets) are given, a negative row is also hidden from any branch
    whose input alone belongs to a positive: the human and gaze branches of an
    annotated actor, the object stream of an annotated object.
    """
    m, a = len(triplets), len(vocab)
    obj_cols = np.zeros(a, dtype=bool)
    obj_cols[vocab.object_slots] = True
    has_obj = np.array([t.object_id is not None for t in triplets])
    neg = np.array([t.is_negative for t in triplets])
    pair_mask = (has_obj[:, None] & obj_cols[None, :]).astype(float)
    human_mask = np.where(neg[:, None], obj_cols[None, :], True).astype(float)
    object_mask = pair_mask.copy()
    if positives is not None:
        actors = {t.human_id for t in positives}
        used = {t.object_id for t in positives if t.object_id is not None}
        for i, t in enumerate(triplets):
            if not t.is_negative:
                continue
            if t.human_id in actors:
                human_mask[i] = 0.0
            if t.object_id in used:
                object_mask[i] = 0.0
    return {"ho": pair_mask, "o": object_mask, "h": human_mask, "gaze": human_mask}


@dataclass
class EpochStats:
    epoch: int
    loss_ho: float
    loss_gaze: float
    loss_h: float
    loss_o: float

    @property
    def total(self) -> float:
        return self.loss_ho + self.loss_gaze + self.loss_h + self.loss_o

    def row(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss_ho": self.loss_ho,
            "loss_gaze": self.loss_gaze,
            "loss_h": self.loss_h,
            "loss_o": self.loss_o,
            "total": self.total,
        }


@dataclass
class TrainResult:
    params: ModelParams
    model_config: ModelConfig
    history: list[EpochStats]
    optimizer: OptimizerState
    skipped_gt: int
    fingerprint: str


class _SceneData:
    """Positives plus a lazily encoded feature row for every pair the scene can emit."""

    def __init__(self, scene: Scene, vocab: ActionVocabulary, cfg: TrainConfig, mcfg: ModelConfig):
        self.scene = scene
        pos = positive_triplets(scene, vocab, cfg.region_mode, cfg.k_regions, cfg.match_iou, cfg.human_category)
        self.positives = pos.triplets
        self.skipped = pos.skipped
        self.pool: list[tuple[int, int]] = []
        if cfg.mining != "none" and cfg.negative_ratio > 0:
            self.pool = negative_pool(scene, self.positives, vocab, cfg.mining, cfg.match_iou, cfg.human_category)
        keys = [(t.human_id, t.object_id) for t in self.positives] + list(self.pool)
        self.row = {key: i for i, key in enumerate(keys)}
        inst = scene.instance
        pairs = [(inst(h), None if o is None else inst(o)) for h, o in keys]
        self.features: Optional[FeatureBatch] = encode(scene, mcfg, pairs) if pairs else None


def train(
    scenes: Sequence[Scene],
    vocab: ActionVocabulary,
    config: TrainConfig,
    params: Optional[ModelParams] = None,
) -> TrainResult:
    """Train the four branches with momentum SGD on image-centric batches.

    Detections are threshold-filtered first. Negatives are re-drawn every epoch.
    """
    rng = np.random.default_rng(config.seed)
    mcfg = config.model_config(len(vocab))
    if params is None:
        params = ModelParams.init(mcfg, rng)
    filtered = [filter_detections(s, config.human_thresh, config.object_thresh, config.human_category) for s in scenes]
    data = [_SceneData(s, vocab, config, mcfg) for s in filtered]
    data = [d for d in data if d.positives]
    if not data:
        raise ValueError("dataset has no positive training triplets")
    skipped = sum(d.skipped for d in data)
    if skipped:
        log.info("skipped %d ground-truth entries without a matching detection", skipped)

    all_params = params.parameters()
    active = trainable_mask(params, mcfg)
    train_params = [p for p, keep in zip(all_params, active) if keep]
    opt = OptimizerState.for_params(
        train_params,
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    by_id = {d.scene.scene_id: d for d in data}
    history = []
    for epoch in range(1, config.epochs + 1):
        groups = {}
        for d in data:
            negs = [
                TrainingTriplet(d.scene.scene_id, hid, oid, (), np.zeros(len(vocab)))
                for hid, oid in sample_pool(d.pool, len(d.positives), config.negative_ratio, rng)
            ]
            groups[d.scene.scene_id] = d.positives + negs
        sums = dict.fromkeys(BRANCHES, 0.0)
        nb = 0
        for batch in make_batches(groups, config.batch_size, rng):
            d = by_id[batch.scene_id]
            rows = [d.row[(t.human_id, t.object_id)] for t in batch.triplets]
            feats = d.features.take(rows)
            labels = np.stack([t.labels for t in batch.triplets])
            masks = loss_masks(batch.triplets, vocab, d.positives)
            scores, cache = forward_batch(params, feats, "train", rng)
            for name, val in branch_losses(scores, labels, masks, mcfg.use_gaze).items():
                sums[name] += val
            grads = backward_batch(params, cache, scores, labels, masks, mcfg.use_gaze)
            sgd_step(train_params, [g for g, keep in zip(grads, active) if keep], opt)
            nb += 1
        stats = EpochStats(epoch, *(sums[b] / nb for b in BRANCHES))
        history.append(stats)
        log.debug("epoch %d total loss %.5f", epoch, stats.total)
    return TrainResult(params, mcfg, history, opt, skipped, mcfg.fingerprint())


def write_metrics_csv(history: Sequence[EpochStats], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "loss_ho", "loss_gaze", "loss_h", "loss_o", "total"])
        writer.writeheader()
        for s in history:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in s.row().items()})
