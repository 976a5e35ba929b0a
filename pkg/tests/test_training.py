from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import gt, inst, scene, uniform_map, vocab2
from ihoi.synth import SynthConfig, generate
from ihoi.training import (
    TrainConfig,
    TrainingTriplet,
    loss_masks,
    make_batches,
    mine_hard_negatives,
    negative_pool,
    positive_triplets,
    train,
)

H = (0, 0, 20, 40)
O = (25, 10, 35, 20)


def _basic(extra=(), gts=None):
    objs = [inst(0, H, 0.95, cat=0), inst(1, O, 0.9, cat=1)] + list(extra)
    return scene(objs, {0: uniform_map(4, 4, 1.0, 100, 100)}, gts if gts is not None else [gt(H, O, 0)])


def test_exact_match_positive():
    res = positive_triplets(_basic(), vocab2())
    (t,) = res.triplets
    assert (t.human_id, t.object_id, list(t.labels), res.skipped) == (0, 1, [1.0, 0.0], 0)


def test_poorly_matched_gt_is_skipped():
    s = _basic(gts=[gt(H, (30, 15, 45, 30), 0)])
    res = positive_triplets(s, vocab2())
    assert res.triplets == [] and res.skipped == 1


def test_two_actions_on_one_pair_merge():
    s = _basic(gts=[gt(H, O, 0), gt(H, None, 1)])
    (t,) = positive_triplets(s, vocab2()).triplets
    assert list(t.labels) == [1.0, 1.0]


def test_pool_bound_and_ratio_zero():
    s = _basic(extra=[inst(2, (50, 50, 60, 60), 0.9, cat=2)])
    pos = positive_triplets(s, vocab2()).triplets
    negs = mine_hard_negatives(s, pos, 2.0, np.random.default_rng(0), vocab2())
    assert [(n.human_id, n.object_id) for n in negs] == [(0, 2)]
    assert not np.any(negs[0].labels)
    assert mine_hard_negatives(s, pos, 0.0, np.random.default_rng(0), vocab2()) == []


def test_sampling_is_seeded():
    h2 = (60, 0, 80, 40)
    extra = [inst(2, (50, 50, 60, 60), cat=2), inst(3, h2, 0.95, cat=0), inst(4, (85, 10, 95, 20), cat=1)]
    s = _basic(extra=extra, gts=[gt(H, O, 0), gt(h2, (85, 10, 95, 20), 0)])
    pos = positive_triplets(s, vocab2()).triplets
    assert len(pos) == 2 and len(negative_pool(s, pos, vocab2())) == 4
    a = mine_hard_negatives(s, pos, 1.0, np.random.default_rng(5), vocab2())
    b = mine_hard_negatives(s, pos, 1.0, np.random.default_rng(5), vocab2())
    assert len(a) == 2 and [(t.human_id, t.object_id) for t in a] == [(t.human_id, t.object_id) for t in b]


def test_alternative_pool_skips_actor_regroupings():
    # object 2 shares the true object's category: a re-pairing the alternative pool leaves out
    h2 = (60, 0, 80, 40)
    extra = [inst(2, (50, 50, 60, 60), cat=1), inst(3, h2, 0.95, cat=0)]
    s = _basic(extra=extra)
    pos = positive_triplets(s, vocab2()).triplets
    mis = set(negative_pool(s, pos, vocab2(), "misgroup"))
    alt = set(negative_pool(s, pos, vocab2(), "alternative"))
    assert (0, 2) in mis and (0, 2) not in alt
    # a person who does nothing contributes every pair to both pools
    assert {(3, 1), (3, 2)} <= alt <= mis


def _t(sid, i):
    return TrainingTriplet(sid, 0, i, (), np.array([1.0, 0.0]))


def test_batches_are_single_scene():
    groups = {"a": [_t("a", i) for i in range(3)], "b": [_t("b", i) for i in range(3)]}
    assert [len(b.triplets) for b in make_batches(groups, 32)] == [3, 3]
    big = make_batches({"c": [_t("c", i) for i in range(40)]}, 32)
    assert [len(b.triplets) for b in big] == [32, 8]


@given(st.lists(st.integers(1, 50), min_size=1, max_size=8), st.integers(1, 40), st.integers(0, 100))
def test_batching_properties(sizes, bs, seed):
    groups = {f"s{i}": [_t(f"s{i}", j) for j in range(n)] for i, n in enumerate(sizes)}
    a = make_batches(groups, bs, np.random.default_rng(seed))
    b = make_batches(groups, bs, np.random.default_rng(seed))
    assert [(x.scene_id, len(x.triplets)) for x in a] == [(x.scene_id, len(x.triplets)) for x in b]
    for batch in a:
        assert len(batch.triplets) <= bs and {t.scene_id for t in batch.triplets} == {batch.scene_id}
    assert sum(len(x.triplets) for x in a) == sum(sizes)


def test_loss_masks_object_free_and_negative_rows():
    v = vocab2()
    pos = TrainingTriplet("s", 0, 1, (), np.array([1.0, 0.0]))
    free = TrainingTriplet("s", 3, None, (), np.array([0.0, 1.0]))
    neg_idle = TrainingTriplet("s", 4, 2, (), np.zeros(2))
    neg_actor = TrainingTriplet("s", 0, 2, (), np.zeros(2))
    m = loss_masks([pos, free, neg_idle, neg_actor], v, [pos, free])
    np.testing.assert_array_equal(m["ho"], [[1, 0], [0, 0], [1, 0], [1, 0]])
    np.testing.assert_array_equal(m["h"], [[1, 1], [1, 1], [1, 0], [0, 0]])
    np.testing.assert_array_equal(m["o"], [[1, 0], [0, 0], [1, 0], [1, 0]])


@pytest.fixture(scope="module")
def small_data():
    tr, te, v = generate(SynthConfig(seed=3, train_scenes=30, test_scenes=5))
    return tr, v


@given(st.integers(0, 29))
def test_mined_negatives_never_duplicate_positives(small_data, i):
    tr, v = small_data
    s = tr[i]
    pos = positive_triplets(s, v).triplets
    for mode in ("misgroup", "alternative"):
        negs = mine_hard_negatives(s, pos, 10.0, np.random.default_rng(i), v, mode)
        assert not {(t.human_id, t.object_id) for t in negs} & {(t.human_id, t.object_id) for t in pos}


def test_zero_learning_rate_keeps_params(small_data):
    tr, v = small_data
    cfg = TrainConfig(epochs=2, learning_rate=0.0, weight_decay=0.0)
    res = train(tr, v, cfg)
    init = train(tr, v, replace(cfg, epochs=0)).params
    for a, b in zip(res.params.parameters(), init.parameters()):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic_and_learns(small_data):
    tr, v = small_data
    cfg = TrainConfig(epochs=6)
    a, b = train(tr, v, cfg), train(tr, v, cfg)
    assert [h.row() for h in a.history] == [h.row() for h in b.history]
    totals = [h.total for h in a.history]
    assert all(np.isfinite(totals)) and totals[-1] < totals[0]


def test_no_mining_trains_on_positives_only(small_data):
    tr, v = small_data
    res = train(tr, v, TrainConfig(epochs=1, mining="none"))
    assert res.history[0].total > 0


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train([scene([inst(0, H, cat=0)])], vocab2(), TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mining="random")
    with pytest.raises(ValueError):
        TrainConfig(negative_ratio=-1)
