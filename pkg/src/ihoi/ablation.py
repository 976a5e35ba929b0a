"""Ablation lattice as configuration, the suite runner, and the gradient oracle suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core_types import filter_detections
from .evaluation import evaluate_predictions
from .inference import detect_all
from .model import ModelConfig, model_grad_check
from .neural import DenseNet, net_loss_check
from .synth import SynthConfig, generate
from .training import TrainConfig, train


@dataclass(frozen=True)
class Variant:
    key: str
    label: str
    use_pose: str
    region_mode: str
    mining: str

    def apply(self, config: TrainConfig) -> TrainConfig:
        return replace(config, use_pose=self.use_pose, region_mode=self.region_mode, mining=self.mining)


VARIANTS = (
    Variant("base", "base (appearance + layout)", "none", "none", "none"),
    Variant("a", "(a) pose locations", "locations", "none", "none"),
    Variant("b", "(b) pose distances", "distances", "none", "none"),
    Variant("c", "(c) score-sorted regions", "none", "sorted", "none"),
    Variant("d", "(d) gazed regions", "none", "gazed", "none"),
    Variant("e", "(e) pose + gazed regions", "distances", "gazed", "none"),
    Variant("f", "(f) alternative mining", "distances", "gazed", "alternative"),
    Variant("ihoi", "iHOI (mis-group mining)", "distances", "gazed", "misgroup"),
)
SUITES = {"default": [v.key for v in VARIANTS]}
# (higher, lower) pairs the suite is expected to order
ORDERINGS = (("e", "d"), ("d", "c"), ("c", "base"), ("b", "a"), ("ihoi", "f"), ("f", "e"))


def variant(key: str) -> Variant:
    for v in VARIANTS:
        if v.key == key:
            return v
    raise KeyError(f"unknown variant {key!r}")


def run_variant(v: Variant, synth: SynthConfig, config: TrainConfig, data=None) -> float:
    """Train ``v`` on the synthetic split of ``synth`` and return test mAP_role."""
    tr, te, vocab = data if data is not None else generate(synth)
    cfg = v.apply(config)
    res = train(tr, vocab, cfg)
    te_f = [filter_detections(s, cfg.human_thresh, cfg.object_thresh, cfg.human_category) for s in te]
    preds = detect_all(res.params, res.model_config, te_f, vocab)
    return evaluate_predictions(preds, te, vocab).mAP_role


@dataclass
class SuiteResult:
    keys: list[str]
    seeds: list[int]
    scores: dict[str, list[float]]
    seconds: float

    def mean(self, key: str) -> float:
        return float(np.mean(self.scores[key]))

    def wins(self, hi: str, lo: str) -> int:
        return sum(a > b for a, b in zip(self.scores[hi], self.scores[lo]))

    def table(self) -> str:
        head = f"{'variant':<30}" + "".join(f"{'s' + str(s):>8}" for s in self.seeds) + f"{'mean':>8}"
        lines = [head, "-" * len(head)]
        for k in self.keys:
            row = "".join(f"{100 * x:>8.2f}" for x in self.scores[k])
            lines.append(f"{variant(k).label:<30}{row}{100 * self.mean(k):>8.2f}")
        pairs = [(h, l) for h, l in ORDERINGS if h in self.scores and l in self.scores]
        if pairs:
            lines.append("")
            for h, l in pairs:
                gap = 100 * (self.mean(h) - self.mean(l))
                lines.append(f"{h} > {l}: {self.wins(h, l)}/{len(self.seeds)} seeds, mean gap {gap:+.2f}")
        return "\n".join(lines)


def run_suite(
    keys: Sequence[str],
    seeds: Sequence[int],
    synth: Optional[SynthConfig] = None,
    config: Optional[TrainConfig] = None,
) -> SuiteResult:
    """Every variant in ``keys`` on every seed; the seed drives both data and training."""
    synth = synth or SynthConfig()
    config = config or TrainConfig()
    start = time.perf_counter()
    scores = {k: [] for k in keys}
    for s in seeds:
        data = generate(replace(synth, seed=s))
        for k in keys:
            scores[k].append(run_variant(variant(k), replace(synth, seed=s), replace(config, seed=s), data))
    return SuiteResult(list(keys), list(seeds), scores, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Gradient oracle suite
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    name: str
    seed: int
    max_relative_error: float
    passed: bool


def oracle_configs(num_categories: int = 4, appearance_dim: int = 4, num_actions: int = 3, hidden: int = 6):
    """One model per (pose, regions) pair; mining changes data, not the network."""
    out = []
    for pose in ("none", "locations", "distances"):
        for regions in ("none", "sorted", "gazed"):
            cfg = ModelConfig(num_categories, appearance_dim, num_actions, hidden, 0.5, pose, regions, 3)
            out.append((f"pose={pose} regions={regions}", cfg))
    return out


def gradcheck_suite(seeds: Sequence[int] = range(20), tolerance: float = 1e-4, **dims) -> list[OracleResult]:
    """Central-difference checks of a bare net and of every model configuration."""
    results = []
    for s in seeds:
        rng = np.random.default_rng([s, 7])
        net = DenseNet.init((5, 4, 3), rng)
        x = rng.normal(size=(6, 5))
        y = (rng.random((6, 3)) < 0.5).astype(float)
        rep = net_loss_check(net, x, y, tolerance)
        results.append(OracleResult("dense net", s, rep.max_relative_error, rep.passed))
    for name, cfg in oracle_configs(**dims):
        for s in seeds:
            rep = model_grad_check(cfg, s, tolerance)
            results.append(OracleResult(name, s, rep.max_relative_error, rep.passed))
    return results
