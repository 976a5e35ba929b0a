from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ihoi.core_types import filter_detections, load_scenes, load_vocabulary, save_scenes
from ihoi.evaluation import evaluate_predictions
from ihoi.gaze_context import gaze_weight
from ihoi.inference import detect_all
from ihoi.synth import SynthConfig, generate, write_dataset
from ihoi.training import TrainConfig, train

SMALL = SynthConfig(train_scenes=20, test_scenes=10)


def test_generation_is_byte_identical(tmp_path):
    a = write_dataset(SMALL, tmp_path / "a")
    b = write_dataset(SMALL, tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    other = write_dataset(replace(SMALL, seed=1), tmp_path / "c")
    assert other["train"].read_bytes() != a["train"].read_bytes()


def test_written_split_loads_back(tmp_path):
    paths = write_dataset(SMALL, tmp_path)
    _, _, vocab = generate(SMALL)
    save_scenes(load_scenes(paths["train"], 8, 16), tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == paths["train"].read_bytes()
    assert load_vocabulary(paths["vocab"]).fingerprint() == vocab.fingerprint()


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_ground_truth_boxes_are_detected_exactly(seed):
    tr, te, vocab = generate(replace(SMALL, seed=seed, train_scenes=5, test_scenes=0))
    for s in tr:
        boxes = {i.box for i in s.instances}
        for g in s.ground_truth:
            assert g.human_box in boxes
            assert (g.object_box is None) == (not vocab[g.action_role_id].requires_object)
            if g.object_box is not None:
                assert g.object_box in boxes
        for i in s.instances:
            assert 0 <= i.box.x1 < i.box.x2 <= s.image_width and 0 <= i.box.y1 < i.box.y2 <= s.image_height


@pytest.mark.parametrize("seed", range(3))
def test_without_distractors_each_object_is_unique_in_its_category(seed):
    tr, te, _ = generate(replace(SMALL, seed=seed, distractor_rate=0.0))
    for s in tr + te:
        for g in s.ground_truth:
            if g.object_box is None:
                continue
            o = next(i for i in s.instances if i.box == g.object_box)
            assert sum(i.category == o.category for i in s.instances) == 1


@pytest.mark.parametrize("seed", range(3))
def test_gaze_prefers_true_object_over_same_category_distractors(seed):
    tr, te, _ = generate(replace(SMALL, seed=seed))
    checked = 0
    for s in tr + te:
        for g in s.ground_truth:
            if g.object_box is None:
                continue
            h = next(i for i in s.instances if i.box == g.human_box)
            o = next(i for i in s.instances if i.box == g.object_box)
            gm = s.gaze_map(h.id)
            if gm is None:
                continue
            for d in s.instances:
                if d.category == o.category and d.id != o.id:
                    checked += 1
                    assert gaze_weight(gm, d.box) < gaze_weight(gm, o.box)
    assert checked > 0


def test_invalid_configs_rejected():
    for bad in (dict(distractor_rate=1.5), dict(humans_min=3, humans_max=2), dict(distractor_scale=0.0),
                dict(clutter_score_min=0.7, clutter_score_max=0.6), dict(appearance_noise=-1.0)):
        with pytest.raises(ValueError):
            SynthConfig(**bad)


def test_no_signal_data_is_not_learnable():
    flat = SynthConfig(
        appearance_separation=0.0, human_separation=0.0, free_separation=0.0, gaze_concentration=0.0,
        pose_strength=0.0, layout_strength=0.0, context_rate=0.0, context_cues=False, distractor_scale=1.0,
    )
    tr, te, vocab = generate(flat)
    cfg = TrainConfig()
    res = train(tr, vocab, cfg)
    te_f = [filter_detections(s, cfg.human_thresh, cfg.object_thresh) for s in te]
    preds = detect_all(res.params, res.model_config, te_f, vocab)
    trained = evaluate_predictions(preds, te, vocab).mAP_role
    rng = np.random.default_rng(0)
    chance = np.mean([
        evaluate_predictions([replace(p, score=float(rng.random())) for p in preds], te, vocab).mAP_role
        for _ in range(10)
    ])
    assert trained < 0.25 and abs(trained - chance) < 0.1
