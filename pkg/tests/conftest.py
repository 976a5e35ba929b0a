"""Builders for tiny hand-made scenes shared by the test modules."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ihoi.core_types import (
    ActionSlot,
    ActionVocabulary,
    BoundingBox,
    DetectedInstance,
    GazeMap,
    GroundTruthHOI,
    PoseJoints,
    Scene,
)

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

C, D = 4, 3


def cats(top, c=C):
    """Category scores peaked at ``top``."""
    s = np.full(c, 0.05)
    s[top] = 0.8
    return s


def inst(i, box, score=0.9, cat=1, app=None, joints=None, c=C, d=D):
    app = np.zeros(d) if app is None else np.asarray(app, dtype=float)
    return DetectedInstance(i, BoundingBox(*box), score, cats(cat, c), app, joints)


def joints_at(points, present=None):
    pts = [tuple(map(float, p)) for p in points]
    if len(pts) == 1:
        pts = pts * 8
    return PoseJoints(tuple(pts), tuple(present or [True] * 8))


def uniform_map(h=4, w=4, value=1.0, iw=4.0, ih=4.0):
    return GazeMap(h, w, np.full((h, w), value), iw, ih)


def vocab2():
    """One object slot (categories 1, 2) and one object-free slot."""
    return ActionVocabulary(
        (
            ActionSlot("hold", "obj", True, frozenset({1, 2})),
            ActionSlot("smile", "", False, frozenset()),
        )
    )


def scene(instances, gaze=None, gts=(), sid="s0", w=100.0, h=100.0):
    return Scene(sid, w, h, tuple(instances), dict(gaze or {}), tuple(gts))


def gt(hbox, obox, a):
    return GroundTruthHOI(BoundingBox(*hbox), None if obox is None else BoundingBox(*obox), a)


@pytest.fixture
def vocab():
    return vocab2()
