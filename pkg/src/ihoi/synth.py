"""Deterministic synthetic HOI scenes with planted, learnable signal.

Every scene is a row of people facing right. An active person interacts with one
object placed at a slot-specific offset (in units of the person's box), looks at it
(gaze bump), reaches towards it (joints) and has slot-specific appearance.
Distractors copy an interacting object's category and look but are smaller and
drift towards the spot of another action, so only geometry tells them apart.
Object-free actions come with a gazed cue object in front of the person.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .core_types import (
    NUM_JOINTS,
    ActionSlot,
    ActionVocabulary,
    BoundingBox,
    DetectedInstance,
    GazeMap,
    GroundTruthHOI,
    PoseJoints,
    Scene,
    save_scenes,
    save_vocabulary,
)
from .gaze_context import gaze_weight


def default_vocabulary() -> ActionVocabulary:
    return ActionVocabulary(
        (
            ActionSlot("hold", "obj", True, frozenset({1, 2, 3})),
            ActionSlot("kick", "obj", True, frozenset({3, 4})),
            ActionSlot("ride", "instr", True, frozenset({4, 5, 6})),
            ActionSlot("look", "obj", True, frozenset({1, 6, 7})),
            ActionSlot("walk", "", False, frozenset()),
            ActionSlot("smile", "", False, frozenset()),
        )
    )


# object centre offset from the person's centre, in (box width, box height) units
SLOT_OFFSETS = {0: (1.0, 0.0), 1: (0.5, 0.6), 2: (-0.1, 0.8), 3: (0.35, -0.8)}
# where the gaze cue of an object-free action sits, same units
CUE_OFFSETS = ((1.2, 0.5), (1.2, -0.5))
# joints pulled towards the object, with pull fraction
SLOT_PULLS = {0: ((4, 5), 0.5), 1: ((6, 7), 0.3), 2: ((6, 7), 0.3), 3: ((0,), 0.3)}
# joint template, (u, v) inside the person's box
JOINT_TEMPLATE = np.array(
    [
        [0.55, 0.08],
        [0.50, 0.18],
        [0.35, 0.22],
        [0.65, 0.22],
        [0.30, 0.38],
        [0.70, 0.38],
        [0.40, 0.55],
        [0.60, 0.55],
    ]
)


@dataclass
class SynthConfig:
    seed: int = 0
    train_scenes: int = 200
    test_scenes: int = 100
    image_width: float = 640.0
    image_height: float = 480.0
    num_categories: int = 8
    appearance_dim: int = 16
    humans_min: int = 1
    humans_max: int = 2
    active_prob: float = 0.6
    no_object_prob: float = 0.35
    clutter_min: int = 3
    clutter_max: int = 6
    distractor_rate: float = 1.0
    distractor_drift: float = 0.4
    distractor_scale: float = 0.35
    shared_action_prob: float = 0.0
    context_rate: float = 0.7
    context_strength: float = 0.5
    clutter_score_min: float = 0.4
    clutter_score_max: float = 0.6
    context_cues: bool = True
    gaze_dropout: float = 0.0
    joint_miss_prob: float = 0.1
    appearance_separation: float = 1.0
    human_separation: float = 0.7
    free_separation: float = 0.3
    appearance_noise: float = 0.25
    gaze_concentration: float = 0.9
    pose_strength: float = 1.0
    layout_strength: float = 1.0
    offset_noise: float = 0.08
    jitter: float = 0.0
    gaze_grid_height: int = 24
    gaze_grid_width: int = 32

    def __post_init__(self):
        if self.train_scenes < 0 or self.test_scenes < 0:
            raise ValueError("scene counts must be non-negative")
        if not 1 <= self.humans_min <= self.humans_max:
            raise ValueError("need 1 <= humans_min <= humans_max")
        if not 0 <= self.clutter_min <= self.clutter_max:
            raise ValueError("need 0 <= clutter_min <= clutter_max")
        for name in (
            "active_prob", "no_object_prob", "distractor_rate", "distractor_drift", "context_rate",
            "shared_action_prob", "gaze_dropout", "joint_miss_prob", "gaze_concentration", "pose_strength",
            "layout_strength", "clutter_score_min", "clutter_score_max",
        ):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.clutter_score_min > self.clutter_score_max:
            raise ValueError("need clutter_score_min <= clutter_score_max")
        for name in ("appearance_separation", "human_separation", "free_separation", "context_strength",
                     "appearance_noise", "jitter", "offset_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.distractor_scale <= 0:
            raise ValueError("distractor_scale must be positive")
        if self.num_categories != 8:
            raise ValueError("the built-in vocabulary needs num_categories = 8")
        if self.appearance_dim < 1 or self.gaze_grid_height < 1 or self.gaze_grid_width < 1:
            raise ValueError("appearance_dim and gaze grid sizes must be positive")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class _World:
    """Appearance prototypes shared by every scene of one seed."""

    human_action: np.ndarray
    human_idle: np.ndarray
    human_free: np.ndarray
    object_category: np.ndarray
    object_action: np.ndarray

    @classmethod
    def draw(cls, cfg: SynthConfig, vocab: ActionVocabulary) -> "_World":
        rng = np.random.default_rng([cfg.seed, 0])
        d = cfg.appearance_dim

        def unit(n):
            # orthogonal within a group (as far as the dimension allows), norm 2
            g = rng.normal(size=(max(n, d), d))
            q, _ = np.linalg.qr(g.T)
            rows = [q[:, i % q.shape[1]] for i in range(n)]
            return 2.0 * np.array(rows) * np.sign(rng.normal(size=(n, 1)))

        return cls(
            human_action=unit(len(vocab)),
            human_idle=unit(1)[0],
            human_free=unit(len(vocab)),
            object_category=unit(cfg.num_categories),
            object_action=unit(len(vocab)),
        )


@dataclass
class _Builder:
    cfg: SynthConfig
    rng: np.random.Generator
    instances: list = field(default_factory=list)

    def category_scores(self, cat: int) -> np.ndarray:
        c = self.cfg.num_categories
        top = self.rng.uniform(0.6, 0.95)
        rest = self.rng.random(c - 1)
        rest = rest / rest.sum() * (1.0 - top) * self.rng.uniform(0.5, 1.0)
        scores = np.insert(rest, cat, top)
        return np.round(scores, 6)

    def box(self, cx, cy, w, h) -> BoundingBox:
        cfg = self.cfg
        if cfg.jitter > 0:
            cx += self.rng.normal(scale=cfg.jitter * w)
            cy += self.rng.normal(scale=cfg.jitter * h)
        # shift (not clip) so the whole box stays inside the image
        w, h = min(w, cfg.image_width), min(h, cfg.image_height)
        cx = float(np.clip(cx, w / 2, cfg.image_width - w / 2))
        cy = float(np.clip(cy, h / 2, cfg.image_height - h / 2))
        x1, y1 = max(cx - w / 2, 0.0), max(cy - h / 2, 0.0)
        x2, y2 = min(cx + w / 2, cfg.image_width), min(cy + h / 2, cfg.image_height)
        return BoundingBox(round(x1, 2), round(y1, 2), round(x2, 2), round(y2, 2))

    def add(self, box, score, cat, appearance, joints=None) -> DetectedInstance:
        inst = DetectedInstance(
            id=len(self.instances),
            box=box,
            detection_score=round(float(score), 6),
            category_scores=self.category_scores(cat),
            appearance=np.round(appearance, 6),
            joints=joints,
        )
        self.instances.append(inst)
        return inst


def _gaussian(cfg: SynthConfig, cx: float, cy: float, sx: float, sy: float) -> np.ndarray:
    xs = (np.arange(cfg.gaze_grid_width) + 0.5) * cfg.image_width / cfg.gaze_grid_width
    ys = (np.arange(cfg.gaze_grid_height) + 0.5) * cfg.image_height / cfg.gaze_grid_height
    g = np.exp(-0.5 * (((xs[None, :] - cx) / sx) ** 2 + ((ys[:, None] - cy) / sy) ** 2))
    return g / g.sum()


def _gaze_map(cfg: SynthConfig, rng, head: tuple[float, float], targets: list[BoundingBox]) -> GazeMap:
    # unfocused attention lands somewhere around the head
    rx, ry = head[0] + rng.normal(scale=60.0), head[1] + rng.normal(scale=60.0)
    noise = _gaussian(cfg, rx, ry, 40.0, 40.0)
    if not targets:
        density = noise
    else:
        bump = sum(
            _gaussian(cfg, *t.center, max(0.35 * t.width, 8.0), max(0.35 * t.height, 8.0)) for t in targets
        ) / len(targets)
        c = cfg.gaze_concentration
        density = c * bump + (1.0 - c) * noise
    density = density + 1e-4
    density = density / density.sum()
    return GazeMap(cfg.gaze_grid_height, cfg.gaze_grid_width, np.round(density, 8), cfg.image_width, cfg.image_height)


def _drifted(b: "_Builder", place, t: float) -> BoundingBox:
    hbox, (dx, dy), other, w, h = place
    ocx, ocy = hbox.center
    return b.box(ocx + (dx + t * (other[0] - dx)) * hbox.width, ocy + (dy + t * (other[1] - dy)) * hbox.height, w, h)


def _clear_of_gaze(b: "_Builder", gaze: GazeMap, obox: BoundingBox, place, t: float) -> Optional[BoundingBox]:
    """Slide a distractor further along its drift until the true object draws more gaze.

    Small boxes near the bump can out-draw the object once the grid is coarse; ``None``
    means even a full drift does not clear it and the distractor is dropped.
    """
    target = gaze_weight(gaze, obox)
    while True:
        dbox = _drifted(b, place, t)
        if gaze_weight(gaze, dbox) < target:
            return dbox
        if t >= 1.0:
            return None
        t = min(t + 0.1, 1.0)


def _joints(cfg: SynthConfig, rng, hbox: BoundingBox, target: Optional[BoundingBox], slot: Optional[int]):
    uv = JOINT_TEMPLATE + rng.normal(scale=0.02, size=JOINT_TEMPLATE.shape)
    pos = np.column_stack([hbox.x1 + uv[:, 0] * hbox.width, hbox.y1 + uv[:, 1] * hbox.height])
    if target is not None and slot in SLOT_PULLS:
        joints, frac = SLOT_PULLS[slot]
        tc = np.array(target.center)
        for j in joints:
            pos[j] += cfg.pose_strength * frac * (tc - pos[j])
    present = [True] * NUM_JOINTS
    if rng.random() < cfg.joint_miss_prob:
        present[int(rng.integers(NUM_JOINTS))] = False
    pos = np.round(pos, 3)
    return PoseJoints(tuple((float(x), float(y)) for x, y in pos), tuple(present))


def _scene(cfg: SynthConfig, vocab: ActionVocabulary, world: _World, scene_id: str, rng) -> Scene:
    b = _Builder(cfg, rng)
    noise = lambda: rng.normal(scale=cfg.appearance_noise, size=cfg.appearance_dim)  # noqa: E731
    sep = cfg.appearance_separation
    obj_slots = vocab.object_slots
    free_slots = vocab.no_object_slots
    n_humans = int(rng.integers(cfg.humans_min, cfg.humans_max + 1))
    bin_w = cfg.image_width / n_humans
    used_cats: set[int] = set()
    cue_cats: set[int] = set()
    used_slots: set[int] = set()
    gts, gaze, pending = [], {}, []
    for k in range(n_humans):
        hh = rng.uniform(140, 200)
        hw = hh * rng.uniform(0.38, 0.48)
        cx = k * bin_w + rng.uniform(0.3, 0.45) * bin_w + hw / 2
        # leave room for objects held below the feet and looked at above the head
        lo, hi = 0.85 * hh + 25.0, cfg.image_height - 0.85 * hh - 25.0
        cy = rng.uniform(lo, hi) if lo < hi else cfg.image_height / 2
        hbox = b.box(cx, cy, hw, hh)
        slot = None
        if k == 0 or rng.random() < cfg.active_prob:
            if used_slots and rng.random() < cfg.shared_action_prob:
                # same action as someone else here, the classic mis-grouping setup
                choices = sorted(a for a in used_slots if vocab[a].relevant_categories - used_cats - cue_cats)
            else:
                choices = [
                    a for a in obj_slots if a not in used_slots and vocab[a].relevant_categories - used_cats - cue_cats
                ]
            if choices:
                slot = int(rng.choice(choices))
        free = int(rng.choice(free_slots)) if free_slots and rng.random() < cfg.no_object_prob else None
        hsep = cfg.human_separation
        app = hsep * (world.human_action[slot] if slot is not None else world.human_idle)
        if free is not None:
            app = app + cfg.free_separation * world.human_free[free]
        obox, drift = None, None
        if slot is not None:
            used_slots.add(slot)
            cat = int(rng.choice(sorted(vocab[slot].relevant_categories - used_cats - cue_cats)))
            used_cats.add(cat)
            mean_slot = slot if rng.random() < cfg.layout_strength else int(rng.choice(obj_slots))
            dx, dy = SLOT_OFFSETS[mean_slot]
            dx += rng.normal(scale=cfg.offset_noise)
            dy += rng.normal(scale=cfg.offset_noise)
            ow = hw * rng.uniform(0.5, 0.9)
            oh = ow * rng.uniform(0.7, 1.3)
            ocx, ocy = hbox.center
            obox = b.box(ocx + dx * hbox.width, ocy + dy * hbox.height, ow, oh)
            o_app = sep * (world.object_category[cat] + world.object_action[slot]) + noise()
            pending.append(("object", obox, rng.uniform(0.6, 1.0), cat, o_app))
            gts.append(GroundTruthHOI(hbox, obox, slot))
            if rng.random() < cfg.distractor_rate:
                d_app = sep * (world.object_category[cat] + world.object_action[slot]) + noise()
                # drifts towards where another action's object would sit
                other = SLOT_OFFSETS[int(rng.choice([a for a in SLOT_OFFSETS if a != mean_slot]))]
                t = min(cfg.distractor_drift * rng.uniform(0.7, 1.0), 1.0)
                shrink = cfg.distractor_scale * rng.uniform(0.85, 1.15)
                place = (hbox, (dx, dy), other, ow * shrink, oh * shrink)
                dbox = _drifted(b, place, t)
                pending.append(("distractor", dbox, rng.uniform(0.6, 1.0), cat, d_app))
                drift = (len(pending) - 1, place, t)
        targets = [] if obox is None else [obox]
        if free is not None:
            gts.append(GroundTruthHOI(hbox, None, free))
            if cfg.context_cues:
                # something in front of the person that goes with the object-free action
                dx, dy = CUE_OFFSETS[free_slots.index(free) % len(CUE_OFFSETS)]
                cw = hw * rng.uniform(0.4, 0.8)
                cue = b.box(
                    hbox.center[0] + (dx + rng.normal(scale=0.1)) * hw,
                    hbox.center[1] + (dy + rng.normal(scale=0.1)) * hh,
                    cw,
                    cw * rng.uniform(0.7, 1.3),
                )
                cat = int(rng.choice([c for c in range(1, cfg.num_categories) if c not in used_cats]))
                cue_cats.add(cat)
                cue_app = sep * (world.object_category[cat] + world.object_action[free]) + noise()
                pending.append(("cue", cue, rng.uniform(0.6, 0.95), cat, cue_app))
                targets.append(cue)
        joints = _joints(cfg, rng, hbox, obox, slot)
        human = b.add(hbox, rng.uniform(0.85, 1.0), 0, app + noise(), joints)
        gaze[human.id] = None if rng.random() < cfg.gaze_dropout else _gaze_map(cfg, rng, joints.positions[0], targets)
        if drift is not None and gaze[human.id] is not None and cfg.gaze_concentration > 0:
            i, place, t = drift
            dbox = _clear_of_gaze(b, gaze[human.id], obox, place, t)
            pending[i] = None if dbox is None else (pending[i][0], dbox) + pending[i][2:]
    scene_slots = sorted(used_slots | {g.action_role_id for g in gts})
    free_cats = [c for c in range(1, cfg.num_categories) if c not in used_cats]
    n_clutter = int(rng.integers(cfg.clutter_min, cfg.clutter_max + 1)) if free_cats else 0
    for cat in rng.choice(free_cats, size=n_clutter).tolist() if n_clutter else []:
        w = rng.uniform(30, 90)
        h = w * rng.uniform(0.7, 1.3)
        cbox = b.box(rng.uniform(w / 2, cfg.image_width - w / 2), rng.uniform(h / 2, cfg.image_height - h / 2), w, h)
        c_app = sep * world.object_category[cat] + noise()
        if scene_slots and rng.random() < cfg.context_rate:
            # scene context: props that go with what people here are doing
            c_app = c_app + cfg.context_strength * world.object_action[int(rng.choice(scene_slots))]
        pending.append(("clutter", cbox, rng.uniform(cfg.clutter_score_min, cfg.clutter_score_max), int(cat), c_app))
    for _, box, score, cat, app in filter(None, pending):
        b.add(box, score, cat, app)
    return Scene(scene_id, cfg.image_width, cfg.image_height, tuple(b.instances), gaze, tuple(gts))


def generate(config: SynthConfig, vocab: Optional[ActionVocabulary] = None):
    """``(train_scenes, test_scenes, vocabulary)``, a pure function of ``config``."""
    vocab = vocab or default_vocabulary()
    world = _World.draw(config, vocab)
    train = [
        _scene(config, vocab, world, f"train-{i:05d}", np.random.default_rng([config.seed, 1, i]))
        for i in range(config.train_scenes)
    ]
    test = [
        _scene(config, vocab, world, f"test-{i:05d}", np.random.default_rng([config.seed, 2, i]))
        for i in range(config.test_scenes)
    ]
    return train, test, vocab


def write_dataset(config: SynthConfig, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test, vocab = generate(config)
    paths = {
        "train": out / "train.jsonl",
        "test": out / "test.jsonl",
        "vocab": out / "vocab.json",
        "config": out / "synth_config.json",
    }
    save_scenes(train, paths["train"])
    save_scenes(test, paths["test"])
    save_vocabulary(vocab, paths["vocab"])
    paths["config"].write_text(json.dumps(asdict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
