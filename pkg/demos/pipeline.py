"""Generate a synthetic split, train with and without mis-group mining, compare test reports."""

from dataclasses import replace

from ihoi.core_types import filter_detections
from ihoi.evaluation import evaluate_predictions
from ihoi.inference import detect_all
from ihoi.synth import SynthConfig, generate
from ihoi.training import TrainConfig, train


def main():
    tr, te, vocab = generate(SynthConfig(seed=0))
    base = TrainConfig()
    for label, cfg in (("mis-group mining", base), ("no mining", replace(base, mining="none"))):
        res = train(tr, vocab, cfg)
        scenes = [filter_detections(s, cfg.human_thresh, cfg.object_thresh) for s in te]
        report = evaluate_predictions(detect_all(res.params, res.model_config, scenes, vocab), te, vocab)
        print(f"== {label}: final loss {res.history[-1].total:.4f}")
        print(report.table())
        print()


if __name__ == "__main__":
    main()
