import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import inst, joints_at
from ihoi.core_types import BoundingBox, DetectedInstance
from ihoi.feature_space import (
    FeatureLayout,
    build_feature,
    pairwise_embedding,
    pose_distance_vector,
    relative_location,
)

B = BoundingBox


@pytest.mark.parametrize(
    "box, other, expected",
    [
        ((0, 0, 10, 10), (0, 0, 10, 10), (0, 0, 0, 0)),
        ((10, 0, 20, 10), (0, 0, 10, 10), (1, 0, 0, 0)),
        ((0, 0, 10, 10), (0, 0, 20, 10), (-0.25, 0, math.log(0.5), 0)),
    ],
)
def test_relative_location_values(box, other, expected):
    np.testing.assert_allclose(relative_location(B(*box), B(*other)), expected, atol=1e-12)
    assert abs(relative_location(B(*box), B(*other))[2] - expected[2]) < 1e-4


def test_pose_distance_zero_and_absent_cases():
    target = B(0, 0, 10, 10)
    assert np.all(pose_distance_vector(joints_at([(5, 5)]), target, 7.0) == 0)
    assert np.all(pose_distance_vector(None, target, 7.0) == 0)
    partial = joints_at([(1, 1)], present=[True] * 7 + [False])
    assert np.all(pose_distance_vector(partial, target, 7.0) == 0)


def test_pose_distance_single_joint():
    pts = [(5, 10)] * 8
    pts[3] = (5, 5)
    v = pose_distance_vector(joints_at(pts), B(0, 5, 10, 15), 10.0)
    np.testing.assert_allclose(v[6:8], (0, -0.5))
    assert np.all(v[np.r_[0:6, 8:16]] == 0)


def test_build_feature_concatenation():
    d = DetectedInstance(0, B(0, 0, 10, 10), 0.9, np.array([0.1, 0.9]), np.array([1.0, 2.0]))
    f = build_feature(d, B(0, 0, 10, 10), None, 10.0, B(0, 0, 10, 10))
    np.testing.assert_allclose(f, [0.1, 0.9, 1, 2, 0, 0, 0, 0] + [0] * 16)
    assert len(f) == FeatureLayout(2, 2).size == 2 + 2 + 20


def test_appearance_only_touches_its_slice():
    lay = FeatureLayout(4, 3)
    a = inst(0, (0, 0, 10, 10), app=[0, 0, 0])
    b = inst(0, (0, 0, 10, 10), app=[1, -2, 3])
    fa = build_feature(a, B(5, 5, 20, 20), joints_at([(3, 3)]), 10.0, B(0, 0, 10, 10))
    fb = build_feature(b, B(5, 5, 20, 20), joints_at([(3, 3)]), 10.0, B(0, 0, 10, 10))
    changed = np.nonzero(fa != fb)[0]
    assert set(changed) <= set(range(lay.appearance.start, lay.appearance.stop))


def test_pairwise_embedding_values():
    np.testing.assert_allclose(pairwise_embedding([1, 2], [0.5, 0.5]), [0.5, 1.5])
    assert np.all(pairwise_embedding([3, 4], [3, 4]) == 0)
    with pytest.raises(ValueError):
        pairwise_embedding([1, 2], [1, 2, 3])


coord = st.floats(-500, 500, allow_nan=False)
size = st.floats(1, 300, allow_nan=False)
vec = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12)


@given(coord, coord, size, size)
def test_relative_location_self_is_zero(x, y, w, h):
    b = B(x, y, x + w, y + h)
    assert np.all(relative_location(b, b) == 0)


@given(vec)
def test_pairwise_anti_symmetry(xs):
    x = np.array(xs)
    y = x[::-1] * 0.5
    np.testing.assert_array_equal(pairwise_embedding(x, y), -pairwise_embedding(y, x))


@given(st.lists(st.tuples(coord, coord), min_size=8, max_size=8), coord, coord, size, st.floats(0.1, 20))
def test_pose_distance_scale_invariance(pts, tx, ty, wh, k):
    target = B(tx, ty, tx + 10, ty + 10)
    scaled = B(k * tx, k * ty, k * (tx + 10), k * (ty + 10))
    v = pose_distance_vector(joints_at(pts), target, wh)
    vs = pose_distance_vector(joints_at([(k * x, k * y) for x, y in pts]), scaled, k * wh)
    np.testing.assert_allclose(v, vs, rtol=1e-9, atol=1e-9)


@given(coord, coord, size, size, st.sampled_from(["none", "locations", "distances"]))
def test_feature_length_is_constant(x, y, w, h, mode):
    d = inst(0, (x, y, x + w, y + h))
    f = build_feature(d, B(0, 0, 5, 5), joints_at([(x, y)]), 5.0, d.box, mode, (640, 480))
    assert f.shape == (FeatureLayout(4, 3).size,) and np.all(np.isfinite(f))
