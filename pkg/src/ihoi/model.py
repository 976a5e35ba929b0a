"""The four-branch interaction model: pairwise, human, object and gaze-context heads."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import neural
from .feature_space import POSE_MODES, FeatureLayout
from .neural import DenseNet, ForwardCache, OptimizerState, bce_logit_grad, bce_loss, sigmoid

CHECKPOINT_VERSION = 1
REGION_MODES = ("none", "sorted", "gazed")
BRANCHES = ("ho", "gaze", "h", "o")


@dataclass(frozen=True)
class ModelConfig:
    num_categories: int = 8
    appearance_dim: int = 16
    num_actions: int = 6
    hidden: int = 64
    dropout: float = 0.5
    pose_mode: str = "distances"
    region_mode: str = "gazed"
    k_regions: int = 5
    fusion_ho_sum: str = "sum"

    def __post_init__(self):
        if self.pose_mode not in POSE_MODES:
            raise ValueError(f"pose_mode must be one of {POSE_MODES}")
        if self.region_mode not in REGION_MODES:
            raise ValueError(f"region_mode must be one of {REGION_MODES}")
        if self.fusion_ho_sum not in ("sum", "mean"):
            raise ValueError("fusion_ho_sum must be 'sum' or 'mean'")
        if self.k_regions < 1 or self.hidden < 1 or self.num_actions < 1:
            raise ValueError("k_regions, hidden and num_actions must be positive")

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout(self.num_categories, self.appearance_dim)

    @property
    def feature_dim(self) -> int:
        return self.layout.size

    @property
    def use_gaze(self) -> bool:
        return self.region_mode != "none"

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ModelParams:
    pairwise_head: DenseNet
    human_stream: DenseNet
    object_stream: DenseNet
    gaze_head: DenseNet

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        f, d, a, hid = config.feature_dim, config.appearance_dim, config.num_actions, config.hidden
        return cls(
            pairwise_head=DenseNet.init([f, a], rng),
            human_stream=DenseNet.init([d, hid, a], rng, config.dropout),
            object_stream=DenseNet.init([d, hid, a], rng, config.dropout),
            gaze_head=DenseNet.init([f, a], rng),
        )

    def nets(self) -> dict[str, DenseNet]:
        return {"ho": self.pairwise_head, "gaze": self.gaze_head, "h": self.human_stream, "o": self.object_stream}

    def parameters(self) -> list[np.ndarray]:
        out = []
        for net in self.nets().values():
            out.extend(net.parameters())
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.pairwise_head.copy(), self.human_stream.copy(), self.object_stream.copy(), self.gaze_head.copy()
        )

    def without_dropout(self) -> "ModelParams":
        p = self.copy()
        for net in p.nets().values():
            net.dropout_rate = 0.0
        return p


@dataclass
class FeatureBatch:
    """Stacked inputs for ``M`` triplets.

    ``regions`` is ``M x K x F``; rows with no selected region carry one all-zero
    region so the gaze head always sees at least one input.
    """

    x_pair: np.ndarray
    app_h: np.ndarray
    app_o: np.ndarray
    regions: np.ndarray
    region_mask: np.ndarray
    has_object: np.ndarray

    def __len__(self) -> int:
        return self.x_pair.shape[0]

    def take(self, idx) -> "FeatureBatch":
        return FeatureBatch(
            self.x_pair[idx],
            self.app_h[idx],
            self.app_o[idx],
            self.regions[idx],
            self.region_mask[idx],
            self.has_object[idx],
        )

    @classmethod
    def stack(
        cls,
        x_pairs: Sequence[np.ndarray],
        app_h: Sequence[np.ndarray],
        app_o: Sequence[np.ndarray],
        regions: Sequence[Sequence[np.ndarray]],
        has_object: Sequence[bool],
        feature_dim: int,
    ) -> "FeatureBatch":
        m = len(x_pairs)
        k = max([len(r) for r in regions] + [1])
        reg = np.zeros((m, k, feature_dim))
        mask = np.zeros((m, k), dtype=bool)
        for i, rs in enumerate(regions):
            if len(rs) == 0:
                mask[i, 0] = True
                continue
            reg[i, : len(rs)] = np.asarray(rs)
            mask[i, : len(rs)] = True
        return cls(
            np.asarray(x_pairs, dtype=float).reshape(m, feature_dim),
            np.asarray(app_h, dtype=float).reshape(m, -1),
            np.asarray(app_o, dtype=float).reshape(m, -1),
            reg,
            mask,
            np.asarray(has_object, dtype=bool),
        )


@dataclass
class BranchScores:
    s_ho: np.ndarray
    s_gaze: np.ndarray
    s_h: np.ndarray
    s_o: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"ho": self.s_ho, "gaze": self.s_gaze, "h": self.s_h, "o": self.s_o}


@dataclass
class BatchCache:
    ho: ForwardCache
    h: ForwardCache
    o: ForwardCache
    regions: np.ndarray
    region_argmax: np.ndarray


def _gaze_forward(net: DenseNet, regions: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, b = net.weights[0], net.biases[0]
    z = regions @ w.T + b
    z = np.where(mask[:, :, None], z, -np.inf)
    arg = np.argmax(z, axis=1)
    zmax = np.take_along_axis(z, arg[:, None, :], axis=1)[:, 0, :]
    return zmax, arg


def forward_batch(
    params: ModelParams,
    batch: FeatureBatch,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> tuple[BranchScores, BatchCache]:
    """Sigmoid scores of all four branches; the gaze score is the per-action max over regions."""
    z_ho, c_ho = neural.forward(params.pairwise_head, batch.x_pair, mode, rng)
    z_h, c_h = neural.forward(params.human_stream, batch.app_h, mode, rng)
    z_o, c_o = neural.forward(params.object_stream, batch.app_o, mode, rng)
    z_g, arg = _gaze_forward(params.gaze_head, batch.regions, batch.region_mask)
    scores = BranchScores(sigmoid(z_ho), sigmoid(z_g), sigmoid(z_h), sigmoid(z_o))
    return scores, BatchCache(c_ho, c_h, c_o, batch.regions, arg)


def branch_forward(
    params: ModelParams,
    x_h: np.ndarray,
    x_o: np.ndarray,
    region_features: Sequence[np.ndarray],
    layout: FeatureLayout,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> BranchScores:
    """Branch scores for a single human-object pair."""
    x_h = np.asarray(x_h, dtype=float)
    x_o = np.asarray(x_o, dtype=float)
    batch = FeatureBatch.stack(
        [x_h - x_o],
        [x_h[layout.appearance]],
        [x_o[layout.appearance]],
        [list(region_features)],
        [True],
        layout.size,
    )
    scores, _ = forward_batch(params, batch, mode, rng)
    return BranchScores(scores.s_ho[0], scores.s_gaze[0], scores.s_h[0], scores.s_o[0])


def fuse(scores: BranchScores, ho_sum: str = "sum", use_gaze: bool = True) -> np.ndarray:
    """Action scores ``s_ho * s_gaze * (s_h + s_o)``; ``ho_sum='mean'`` halves the last factor."""
    individual = scores.s_h + scores.s_o
    if ho_sum == "mean":
        individual = 0.5 * individual
    gaze = scores.s_gaze if use_gaze else 1.0
    return scores.s_ho * gaze * individual


def total_loss(
    scores: BranchScores,
    labels: np.ndarray,
    masks: Optional[dict[str, np.ndarray]] = None,
    use_gaze: bool = True,
) -> float:
    """Sum of the per-branch BCE losses against the same labels."""
    return sum(branch_losses(scores, labels, masks, use_gaze).values())


def branch_losses(
    scores: BranchScores,
    labels: np.ndarray,
    masks: Optional[dict[str, np.ndarray]] = None,
    use_gaze: bool = True,
) -> dict[str, float]:
    masks = masks or {}
    out = {}
    for name, s in scores.as_dict().items():
        if name == "gaze" and not use_gaze:
            out[name] = 0.0
            continue
        out[name] = bce_loss(s, labels, masks.get(name))
    return out


def backward_batch(
    params: ModelParams,
    cache: BatchCache,
    scores: BranchScores,
    labels: np.ndarray,
    masks: Optional[dict[str, np.ndarray]] = None,
    use_gaze: bool = True,
) -> list[np.ndarray]:
    """Gradients of :func:`total_loss`, aligned with ``params.parameters()``.

    Branches share no weights, so each branch only sees its own loss term.
    """
    masks = masks or {}
    g_ho, _ = neural.backward(params.pairwise_head, cache.ho, bce_logit_grad(scores.s_ho, labels, masks.get("ho")))
    g_h, _ = neural.backward(params.human_stream, cache.h, bce_logit_grad(scores.s_h, labels, masks.get("h")))
    g_o, _ = neural.backward(params.object_stream, cache.o, bce_logit_grad(scores.s_o, labels, masks.get("o")))
    gw = params.gaze_head.weights[0]
    if use_gaze:
        dz = bce_logit_grad(scores.s_gaze, labels, masks.get("gaze"))
        m, k, f = cache.regions.shape
        a = dz.shape[1]
        dz_full = np.zeros((m, k, a))
        np.put_along_axis(dz_full, cache.region_argmax[:, None, :], dz[:, None, :], axis=1)
        g_gaze = [np.einsum("mka,mkf->af", dz_full, cache.regions), dz_full.sum(axis=(0, 1))]
    else:
        g_gaze = [np.zeros_like(gw), np.zeros_like(params.gaze_head.biases[0])]
    grads = {"ho": g_ho, "gaze": g_gaze, "h": g_h, "o": g_o}
    out = []
    for name in params.nets():
        out.extend(grads[name])
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    params: ModelParams,
    config: ModelConfig,
    vocab_fingerprint: str,
    optimizer: Optional[OptimizerState] = None,
    extra: Optional[dict] = None,
) -> None:
    """Write a JSON checkpoint (see README for the schema)."""
    obj = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "config_hash": config.fingerprint(),
        "vocab_hash": vocab_fingerprint,
        "nets": {name: net.to_dict() for name, net in params.nets().items()},
        "optimizer": None,
        "extra": extra or {},
    }
    if optimizer is not None:
        obj["optimizer"] = {
            "learning_rate": optimizer.learning_rate,
            "momentum": optimizer.momentum,
            "weight_decay": optimizer.weight_decay,
            "velocity": [{"shape": list(v.shape), "values": v.ravel().tolist()} for v in optimizer.velocity],
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    vocab_hash: str
    optimizer: Optional[OptimizerState] = None
    extra: dict = field(default_factory=dict)


def load_checkpoint(path, vocab_fingerprint: Optional[str] = None) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {obj.get('format_version')!r}")
    config = ModelConfig(**obj["config"])
    if obj["config_hash"] != config.fingerprint():
        raise ValueError("checkpoint config hash does not match its config")
    if vocab_fingerprint is not None and obj["vocab_hash"] != vocab_fingerprint:
        raise ValueError("checkpoint was trained with a different vocabulary")
    nets = {name: DenseNet.from_dict(d) for name, d in obj["nets"].items()}
    params = ModelParams(nets["ho"], nets["h"], nets["o"], nets["gaze"])
    opt = None
    if obj.get("optimizer"):
        o = obj["optimizer"]
        opt = OptimizerState(
            o["learning_rate"],
            o["momentum"],
            o["weight_decay"],
            [np.asarray(v["values"], dtype=float).reshape(v["shape"]) for v in o["velocity"]],
        )
    return Checkpoint(params, config, obj["vocab_hash"], opt, obj.get("extra", {}))


# ---------------------------------------------------------------------------
# Gradient oracle over the full model
# ---------------------------------------------------------------------------


def random_batch(config: ModelConfig, rng: np.random.Generator, m: int = 4, k: int = 3) -> FeatureBatch:
    f, d = config.feature_dim, config.appearance_dim
    regions = []
    for i in range(m):
        n = 0 if (config.use_gaze and i == 0) else int(rng.integers(1, k + 1))
        regions.append([rng.normal(size=f) for _ in range(n)] if config.use_gaze else [])
    return FeatureBatch.stack(
        [rng.normal(size=f) for _ in range(m)],
        [rng.normal(size=d) for _ in range(m)],
        [rng.normal(size=d) for _ in range(m)],
        regions,
        [True] * m,
        f,
    )


def model_grad_check(config: ModelConfig, seed: int, tolerance: float = 1e-4) -> neural.GradCheckReport:
    """Finite-difference check of every trainable parameter under the total loss (dropout off)."""
    rng = np.random.default_rng(seed)
    params = ModelParams.init(config, rng).without_dropout()
    for p in params.parameters():
        p += rng.normal(scale=0.1, size=p.shape)
    batch = random_batch(config, rng)
    labels = (rng.random((len(batch), config.num_actions)) < 0.4).astype(float)
    masks = {"ho": np.ones_like(labels), "o": np.ones_like(labels)}
    masks["ho"][-1] = 0.0
    masks["o"][-1] = 0.0
    use_gaze = config.use_gaze

    scores, cache = forward_batch(params, batch)
    grads = backward_batch(params, cache, scores, labels, masks, use_gaze)

    def loss():
        s, _ = forward_batch(params, batch)
        return total_loss(s, labels, masks, use_gaze)

    trainable = params.parameters()
    if not use_gaze:
        keep = [i for i, name in enumerate(_param_owner(params)) if name != "gaze"]
        trainable = [trainable[i] for i in keep]
        grads = [grads[i] for i in keep]
    return neural.grad_check(trainable, grads, loss, tolerance)


def _param_owner(params: ModelParams) -> list[str]:
    owners = []
    for name, net in params.nets().items():
        owners.extend([name] * len(net.parameters()))
    return owners


def trainable_mask(params: ModelParams, config: ModelConfig) -> list[bool]:
    return [config.use_gaze or name != "gaze" for name in _param_owner(params)]
