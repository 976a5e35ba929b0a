"""Command-line entry point: generate, train, infer, eval, ablate, gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from . import ablation
from .core_types import SceneFormatError, filter_detections, load_scenes, load_vocabulary
from .evaluation import evaluate, write_report
from .inference import DETECT_MODES, detect_all, save_predictions
from .model import load_checkpoint, save_checkpoint
from .synth import SynthConfig, write_dataset
from .training import TrainConfig, train, write_metrics_csv

log = logging.getLogger("ihoi")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config files: one ``key = value`` per line, ``#`` starts a comment
# ---------------------------------------------------------------------------


def _coerce(kind, key: str, raw: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise CliError(f"config key {key!r}: cannot read {raw!r} as {kind}") from None


def read_config_file(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_config(cls, raw: dict[str, str], overrides: dict, strict_keys: Optional[set] = None):
    """Instance of dataclass ``cls`` from file values, then flag overrides.

    Keys outside ``strict_keys`` (default: the fields of ``cls``) are rejected.
    """
    known = {f.name: f.type for f in fields(cls)}
    allowed = strict_keys if strict_keys is not None else set(known)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _coerce(known[k], k, v) for k, v in raw.items() if k in known}
    values.update({k: v for k, v in overrides.items() if k in known and v is not None})
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None


def _add_config_flags(parser: argparse.ArgumentParser, *classes) -> None:
    group = parser.add_argument_group("config keys (override the --config file)")
    seen = set()
    for cls in classes:
        defaults = cls()
        for f in fields(cls):
            if f.name in seen:
                continue
            seen.add(f.name)
            kind = f.type if isinstance(f.type, str) else f.type.__name__
            default = getattr(defaults, f.name)
            conv = {"int": int, "float": float, "bool": lambda s: _coerce("bool", f.name, s)}.get(kind, str)
            group.add_argument(
                f"--{f.name.replace('_', '-')}",
                dest=f.name,
                type=conv,
                default=None,
                metavar=kind.upper(),
                help=f"default {default}",
            )


def _overrides(args, *classes) -> dict:
    names = {f.name for cls in classes for f in fields(cls)}
    return {k: v for k, v in vars(args).items() if k in names}


def _raw_config(args) -> dict[str, str]:
    return read_config_file(args.config) if getattr(args, "config", None) else {}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = build_config(SynthConfig, _raw_config(args), _overrides(args, SynthConfig))
    paths = write_dataset(cfg, args.out)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(TrainConfig, _raw_config(args), _overrides(args, TrainConfig))
    vocab = load_vocabulary(args.vocab)
    scenes = load_scenes(args.scenes, cfg.num_categories, cfg.appearance_dim)
    res = train(scenes, vocab, cfg)
    save_checkpoint(args.out_checkpoint, res.params, res.model_config, vocab.fingerprint(), res.optimizer, {"train": cfg.to_dict()})
    if args.metrics:
        write_metrics_csv(res.history, args.metrics)
    last = res.history[-1].total if res.history else float("nan")
    print(f"trained {cfg.epochs} epochs on {len(scenes)} scenes, final loss {last:.6f}")
    return 0


def cmd_infer(args) -> int:
    vocab = load_vocabulary(args.vocab)
    ckpt = load_checkpoint(args.checkpoint, vocab.fingerprint())
    stored = ckpt.extra.get("train", {})
    defaults = TrainConfig()
    h_thr = args.human_thresh if args.human_thresh is not None else stored.get("human_thresh", defaults.human_thresh)
    o_thr = args.object_thresh if args.object_thresh is not None else stored.get("object_thresh", defaults.object_thresh)
    human_cat = stored.get("human_category", defaults.human_category)
    scenes = load_scenes(args.scenes, ckpt.config.num_categories, ckpt.config.appearance_dim)
    scenes = [filter_detections(s, h_thr, o_thr, human_cat) for s in scenes]
    preds = detect_all(ckpt.params, ckpt.config, scenes, vocab, args.mode, args.max_per_pair, human_cat)
    save_predictions(preds, args.out)
    print(f"{len(preds)} triplets from {len(scenes)} scenes")
    return 0


def cmd_eval(args) -> int:
    vocab = load_vocabulary(args.vocab)
    scenes = load_scenes(args.scenes)
    train_scenes = load_scenes(args.train_scenes) if args.train_scenes else None
    report = evaluate(args.predictions, scenes, vocab, args.rare_threshold, train_scenes, args.ap_method)
    print(report.table())
    if args.report:
        write_report(report, args.report)
    return 0


def cmd_ablate(args) -> int:
    raw = _raw_config(args)
    allowed = {f.name for f in fields(SynthConfig)} | {f.name for f in fields(TrainConfig)}
    synth = build_config(SynthConfig, raw, _overrides(args, SynthConfig), allowed)
    config = build_config(TrainConfig, raw, _overrides(args, TrainConfig), allowed)
    keys = ablation.SUITES[args.suite]
    seeds = [int(s) for s in args.seeds.split(",")]
    result = ablation.run_suite(keys, seeds, synth, config)
    print(result.table())
    if args.out:
        obj = {"suite": args.suite, "seeds": seeds, "mAP_role": result.scores}
        Path(args.out).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    results = ablation.gradcheck_suite(range(args.seed, args.seed + args.seeds), args.tolerance)
    worst: dict[str, float] = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_relative_error)
    for name, err in worst.items():
        print(f"{name:<36} max rel err {err:.3e}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed (tolerance {args.tolerance:g})")
    return 1 if failed else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ihoi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic train/test split")
    p.add_argument("--config", help="key = value file of synthetic-data settings")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p, SynthConfig)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--scenes", required=True, help="training scenes (JSONL)")
    p.add_argument("--vocab", required=True, help="action vocabulary (JSON)")
    p.add_argument("--config", help="key = value file of training settings")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--metrics", help="per-epoch loss CSV")
    _add_config_flags(p, TrainConfig)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="score triplets for every scene")
    p.add_argument("--scenes", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=DETECT_MODES, default="vcoco")
    p.add_argument("--max-per-pair", type=int, default=10, help="hico mode: objects kept per (human, slot)")
    p.add_argument("--human-thresh", type=float, help="default: value stored in the checkpoint")
    p.add_argument("--object-thresh", type=float, help="default: value stored in the checkpoint")
    p.add_argument("--out", required=True, help="predictions (JSONL)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="per-slot AP and mAP_role")
    p.add_argument("--predictions", required=True)
    p.add_argument("--scenes", required=True, help="scenes with ground truth")
    p.add_argument("--vocab", required=True)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--rare-threshold", type=int, help="also report rare / non-rare splits")
    p.add_argument("--train-scenes", help="scenes used to count training instances for the splits")
    p.add_argument("--ap-method", choices=("all_point", "11_point"), default="all_point")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the ablation variants")
    p.add_argument("--suite", choices=sorted(ablation.SUITES), default="default")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p.add_argument("--config", help="key = value file; synthetic and training keys may be mixed")
    p.add_argument("--out", help="JSON file of per-seed scores")
    _add_config_flags(p, SynthConfig, TrainConfig)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient oracle suite")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, SceneFormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
