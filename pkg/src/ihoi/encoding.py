"""Turn scene instances into model inputs (pair embeddings, appearances, region features)."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core_types import ActionVocabulary, DetectedInstance, Scene, is_human
from .feature_space import human_object_features, pairwise_embedding, region_feature
from .gaze_context import regions_for
from .model import FeatureBatch, ModelConfig


def image_size(scene: Scene) -> tuple[float, float]:
    return (scene.image_width, scene.image_height)


def object_categories(vocab: ActionVocabulary) -> frozenset[int]:
    cats: set[int] = set()
    for slot in vocab.slots:
        cats |= slot.relevant_categories
    return frozenset(cats)


def humans_of(scene: Scene, human_category: int = 0) -> list[DetectedInstance]:
    return [inst for inst in scene.instances if is_human(inst, human_category)]


def objects_for(
    scene: Scene, human: DetectedInstance, vocab: ActionVocabulary, human_category: int = 0
) -> list[DetectedInstance]:
    """Instances that may act as the object of ``human``: non-humans, plus humans if some slot allows them."""
    allow_humans = human_category in object_categories(vocab)
    return [
        inst
        for inst in scene.instances
        if inst.id != human.id and (allow_humans or not is_human(inst, human_category))
    ]


def region_inputs(scene: Scene, human: DetectedInstance, config: ModelConfig) -> tuple[list[int], list[np.ndarray]]:
    ids = regions_for(scene, human, config.region_mode, config.k_regions)
    size = image_size(scene)
    feats = [region_feature(human, scene.instance(i), config.pose_mode, size) for i in ids]
    return ids, feats


def encode(
    scene: Scene,
    config: ModelConfig,
    pairs: Sequence[tuple[DetectedInstance, Optional[DetectedInstance]]],
    region_cache: Optional[dict[int, list[np.ndarray]]] = None,
) -> FeatureBatch:
    """Stack ``(human, object-or-None)`` pairs of one scene into a :class:`FeatureBatch`.

    Object-free rows get zero pair/object inputs.
    """
    layout = config.layout
    size = image_size(scene)
    region_cache = {} if region_cache is None else region_cache
    x_pairs, app_h, app_o, regions, has_obj = [], [], [], [], []
    for human, obj in pairs:
        if human.id not in region_cache:
            region_cache[human.id] = region_inputs(scene, human, config)[1] if config.use_gaze else []
        if obj is None:
            x_pairs.append(np.zeros(layout.size))
            app_o.append(np.zeros(layout.appearance_dim))
            has_obj.append(False)
        else:
            x_h, x_o = human_object_features(human, obj, config.pose_mode, size)
            x_pairs.append(pairwise_embedding(x_h, x_o))
            app_o.append(obj.appearance)
            has_obj.append(True)
        app_h.append(human.appearance)
        regions.append(region_cache[human.id])
    return FeatureBatch.stack(x_pairs, app_h, app_o, regions, has_obj, layout.size)
