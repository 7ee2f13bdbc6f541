import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftbench.errors import ValidationError
from driftbench.stream import (
    Environment, Episode, FeatureFrame, Prediction, StreamEvent, iterate_episode, seen_set_after,
)
from conftest import build_episode


def _ep(N, T):
    return build_episode([[(0, True, [1.0, 0.0])] * T for _ in range(N)], label_fraction=1.0)


def test_iterate_counts_and_order():
    events = list(iterate_episode(_ep(2, 3)))
    assert [ev.frame.t for ev in events] == list(range(6))


def test_unlabeled_frame_reveals_nothing():
    ep = build_episode([[(0, True, [1.0]), (0, False, [1.0])]])
    events = list(iterate_episode(ep))
    assert events[0].revealed_label == 0
    assert events[1].revealed_label is None


def test_short_environment_rejected():
    f = lambda t, i: FeatureFrame(t, i, [0.0], 0, True)
    envs = [Environment(0, [f(0, 0), f(1, 0), f(2, 0)], {0}, [0.0]),
            Environment(1, [f(3, 1), f(4, 1)], {0}, [0.0])]
    with pytest.raises(ValidationError):
        list(iterate_episode(Episode(envs, 0, 1.0)))


def test_label_must_match_frame():
    fr = FeatureFrame(0, 0, [0.0], 3, True)
    with pytest.raises(ValidationError):
        StreamEvent(fr, 4)
    with pytest.raises(ValidationError):
        StreamEvent(FeatureFrame(0, 0, [0.0], 3, False), 3)


def test_frames_are_read_only():
    fr = FeatureFrame(0, 0, [1.0, 2.0], 0, True)
    with pytest.raises(ValueError):
        fr.features[0] = 5.0


def _trace_events():
    A, B = 0, 1
    ep = build_episode([[(A, True, [1.0]), (B, False, [1.0]), (B, True, [1.0])]])
    return list(iterate_episode(ep, check_label_count=False))


def test_seen_set_examples():
    events = _trace_events()
    assert seen_set_after(events, 0) == set()
    assert seen_set_after(events, 2) == {0}
    assert seen_set_after(events, 3) == {0, 1}
    assert seen_set_after(events, 2, include_unlabeled=True) == {0, 1}


def test_seen_set_out_of_range():
    events = _trace_events()
    with pytest.raises(IndexError):
        seen_set_after(events, 4)
    with pytest.raises(IndexError):
        seen_set_after(events, -1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.booleans()), min_size=1, max_size=30))
def test_seen_set_monotone(rows):
    ep = build_episode([[(c, lab, [0.0]) for c, lab in rows]])
    events = list(iterate_episode(ep, check_label_count=False))
    prev = set()
    for t in range(len(events) + 1):
        cur = seen_set_after(events, t)
        assert prev <= cur
        prev = cur


def test_iteration_is_deterministic(tiny_world):
    from driftbench.world import sample_episode
    ep = sample_episode(tiny_world, 3)
    a = [(e.frame.t, e.revealed_label) for e in iterate_episode(ep)]
    b = [(e.frame.t, e.revealed_label) for e in iterate_episode(ep)]
    assert a == b


def test_prediction_ties_go_to_smallest_id():
    p = Prediction.from_scores({5: 0.3, 2: 0.3, 7: 0.1})
    assert p.argmax == 2
    assert Prediction.from_scores({}).argmax is None
