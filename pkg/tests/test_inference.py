from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import C, D, inst, scene, uniform_map, vocab2
from ihoi.core_types import ActionSlot, ActionVocabulary
from ihoi.inference import (
    TripletPrediction,
    detect,
    load_predictions,
    save_predictions,
    score_human_only,
    score_pair,
)
from ihoi.model import ModelConfig, ModelParams, branch_forward, fuse
from ihoi.neural import DenseNet

H = (0, 0, 20, 40)


def _params(seed=0, a=2, regions="gazed"):
    cfg = ModelConfig(C, D, a, 4, 0.5, "distances", regions, 5)
    return ModelParams.init(cfg, np.random.default_rng(seed)).without_dropout(), cfg


def _zero(cfg):
    f, d, a = cfg.feature_dim, cfg.appearance_dim, cfg.num_actions
    one = lambda i: DenseNet([np.zeros((a, i))], [np.zeros(a)])  # noqa: E731
    return ModelParams(one(f), one(d), one(d), one(f))


def test_unit_detection_scores_give_fused_scores():
    p, cfg = _params()
    h = inst(0, H, 1.0, cat=0, app=[1, 0, 0])
    o = inst(1, (25, 5, 35, 15), 1.0, cat=1, app=[0, 1, 0])
    s = scene([h, o], {0: uniform_map(4, 4, 1.0, 100, 100)})
    from ihoi.encoding import encode
    from ihoi.model import forward_batch

    sc, _ = forward_batch(p, encode(s, cfg, [(h, o)]))
    np.testing.assert_allclose(score_pair(p, cfg, s, h, o), fuse(sc)[0], rtol=1e-12)
    o0 = inst(1, (25, 5, 35, 15), 0.0, cat=1)
    assert np.all(score_pair(p, cfg, scene([h, o0]), h, o0) == 0)


@given(st.floats(0, 1), st.floats(0, 1))
def test_score_pair_monotone_in_human_score(a, b):
    p, cfg = _params()
    lo, hi = sorted([a, b])
    o = inst(1, (25, 5, 35, 15), 0.7, cat=1)
    h_lo, h_hi = inst(0, H, lo, cat=0), inst(0, H, hi, cat=0)
    assert np.all(score_pair(p, cfg, scene([h_hi, o]), h_hi, o) >= score_pair(p, cfg, scene([h_lo, o]), h_lo, o))


def test_human_only_quarter_and_missing_gaze():
    _, cfg = _params()
    p = _zero(cfg)
    h = inst(0, H, 1.0, cat=0)
    assert score_human_only(p, cfg, scene([h]), h, vocab2()) == {1: 0.25}
    h0 = inst(0, H, 0.0, cat=0)
    assert score_human_only(p, cfg, scene([h0]), h0, vocab2()) == {1: 0.0}


def test_one_object_one_slot_one_triplet():
    p, cfg = _params(a=1)
    v = ActionVocabulary((ActionSlot("hold", "obj", True, frozenset({1})),))
    s = scene([inst(0, H, cat=0), inst(1, (25, 5, 35, 15), cat=1)])
    out = detect(p, cfg, s, v)
    assert len(out) == 1 and out[0].object_box is not None


def test_irrelevant_category_yields_nothing():
    p, cfg = _params(a=1)
    v = ActionVocabulary((ActionSlot("hold", "obj", True, frozenset({1})),))
    assert detect(p, cfg, scene([inst(0, H, cat=0), inst(1, (25, 5, 35, 15), cat=3)]), v) == []


def test_hico_keeps_ten_sorted():
    p, cfg = _params(a=1)
    v = ActionVocabulary((ActionSlot("hold", "obj", True, frozenset({1})),))
    objs = [inst(i + 1, (20 + 3 * i, 5, 30 + 3 * i, 15), 0.5 + 0.03 * i, cat=1) for i in range(12)]
    out = detect(p, cfg, scene([inst(0, H, cat=0)] + objs), v, "hico")
    assert len(out) == 10
    scores = [t.score for t in out]
    assert scores == sorted(scores, reverse=True)
    assert len(detect(p, cfg, scene([inst(0, H, cat=0)] + objs), v, "vcoco")) == 1


@st.composite
def random_scene(draw):
    n_h, n_o = draw(st.integers(1, 3)), draw(st.integers(0, 6))
    items = []
    for i in range(n_h + n_o):
        x, y = draw(st.floats(0, 80)), draw(st.floats(0, 80))
        w, h = draw(st.floats(2, 20)), draw(st.floats(2, 20))
        cat = 0 if i < n_h else draw(st.integers(1, C - 1))
        app = draw(st.lists(st.floats(-2, 2), min_size=D, max_size=D))
        items.append(inst(i, (x, y, x + w, y + h), draw(st.floats(0, 1)), cat=cat, app=app))
    gaze = {i: (uniform_map(4, 4, 1.0, 100, 100) if draw(st.booleans()) else None) for i in range(n_h)}
    return scene(items, gaze)


@given(random_scene(), st.integers(0, 50))
def test_detect_contract(s, seed):
    p, cfg = _params(seed)
    v = vocab2()
    out = detect(p, cfg, s, v, "vcoco")
    assert out == detect(p, cfg, s, v, "vcoco")
    cats_of = {o.box: o.category for o in s.instances}
    # predictions carry boxes only, so humans sharing a box share the cap
    humans = Counter(o.box for o in s.instances if o.category == 0)
    per = Counter((t.human_box, t.action_role_id, cats_of.get(t.object_box)) for t in out)
    assert all(n <= humans[k[0]] for k, n in per.items())
    for t in out:
        assert (t.object_box is not None) == v[t.action_role_id].requires_object
        assert t.score >= 0
    hico = detect(p, cfg, s, v, "hico")
    per_slot = Counter((t.human_box, t.action_role_id) for t in hico if t.object_box is not None)
    assert all(n <= 10 * humans[k[0]] for k, n in per_slot.items())


@given(random_scene(), st.integers(0, 50))
def test_scores_recompute_from_factors(s, seed):
    p, cfg = _params(seed)
    v = vocab2()
    by_box = {o.box: o for o in s.instances}
    for t in detect(p, cfg, s, v):
        h = next(i for i in s.instances if i.box == t.human_box and i.category == 0)
        if t.object_box is None:
            assert t.score == pytest.approx(score_human_only(p, cfg, s, h, v)[t.action_role_id], abs=1e-12)
        else:
            o = by_box[t.object_box]
            assert t.score == pytest.approx(score_pair(p, cfg, s, h, o)[t.action_role_id], abs=1e-12)


def test_removing_an_object_never_raises_other_scores():
    p, cfg = _params(3, regions="none")
    objs = [inst(i + 1, (25 + 5 * i, 5, 35 + 5 * i, 15), 0.8, cat=1 + i % 2) for i in range(4)]
    full = scene([inst(0, H, cat=0)] + objs)
    fewer = scene([inst(0, H, cat=0)] + objs[1:])
    key = lambda t: (t.object_box, t.action_role_id)  # noqa: E731
    before = {key(t): t.score for t in detect(p, cfg, full, vocab2(), "hico")}
    for t in detect(p, cfg, fewer, vocab2(), "hico"):
        assert t.score <= before[key(t)] + 1e-15


def test_prediction_file_round_trip(tmp_path):
    p, cfg = _params()
    s = scene([inst(0, H, cat=0), inst(1, (25, 5, 35, 15), cat=1)])
    out = detect(p, cfg, s, vocab2())
    save_predictions(out, tmp_path / "p.jsonl")
    assert load_predictions(tmp_path / "p.jsonl") == out
