import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftbench.diffcore import EmbeddingParams, Tape, backward
from driftbench.errors import ConfigError, NumericError, UndefinedMetricError
from driftbench.learners import (
    LEARNER_NAMES, LearnerConfig, LinearHead, PrototypeTable, base_update, context_proto_update,
    cosine_scores, head_loss_and_grad, lwf_update, make_learner, oap_update, recency_gate,
)
from driftbench.objectives import (
    MetaTrainConfig, build_stream_plan, episode_objective, meta_train, online_loss, proto_oml_loss,
    step_decay_lr,
)
from driftbench.stream import iterate_episode
from driftbench.world import WorldConfig, sample_episode
from conftest import build_episode


def _table(rows):
    t = PrototypeTable(len(next(iter(rows.values()))))
    for c, v in rows.items():
        oap_update(t, c, np.asarray(v, dtype=float))
    return t


# --- prototype scoring and updates ----------------------------------------

def test_cosine_examples():
    assert cosine_scores(np.array([2.0, 1.0]), _table({0: [2.0, 1.0]}))[0] == pytest.approx(1.0)
    assert cosine_scores(np.array([0.0, 3.0]), _table({0: [1.0, 0.0]}))[0] == 0.0
    assert cosine_scores(np.array([1.0, 1.0]), _table({0: [1.0, 0.0]}))[0] == pytest.approx(0.70711, abs=1e-5)


def test_cosine_zero_norm_scores_zero():
    assert cosine_scores(np.zeros(2), _table({0: [1.0, 0.0]}))[0] == 0.0
    assert cosine_scores(np.array([1.0, 0.0]), _table({0: [0.0, 0.0]}))[0] == 0.0


def test_empty_table_gives_no_prediction():
    cfg = LearnerConfig(name="oap")
    learner = make_learner(cfg, EmbeddingParams.init(2, 2))
    ep = build_episode([[(0, True, [1.0, 0.0])]])
    assert learner.predict(ep.frames[0]).argmax is None
    assert cosine_scores(np.ones(2), PrototypeTable(2)) == {}


def test_oap_examples():
    t = _table({0: [1.0, 0.0]})
    assert t.count(0) == 1 and np.array_equal(t.prototype(0), [1.0, 0.0])
    oap_update(t, 0, np.array([0.0, 1.0]))
    assert np.allclose(t.prototype(0), [0.5, 0.5]) and t.count(0) == 2
    t = PrototypeTable(1)
    for v in (2.0, 4.0, 9.0):
        oap_update(t, 0, np.array([v]))
    assert t.prototype(0)[0] == pytest.approx(5.0) and t.count(0) == 3


def test_oap_rejects_non_finite():
    with pytest.raises(NumericError):
        oap_update(PrototypeTable(2), 0, np.array([np.nan, 0.0]))


def test_gated_examples():
    t = _table({0: [1.0, 0.0]})
    context_proto_update(t, 0, np.array([0.0, 1.0]), 0.25)
    assert np.allclose(t.prototype(0), [0.75, 0.25])
    context_proto_update(t, 0, np.array([3.0, -1.0]), 1.0)
    assert np.array_equal(t.prototype(0), [3.0, -1.0])


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5, float("nan")])
def test_gate_out_of_range(alpha):
    with pytest.raises(ConfigError):
        context_proto_update(_table({0: [1.0]}), 0, np.array([2.0]), alpha)


def test_recency_gate_bounds_and_reduction():
    assert recency_gate(3, 50, 0.0, 0.0) == 0.25
    assert recency_gate(3, 0, 0.2, 0.05) == 0.25
    assert recency_gate(9, 0, 0.2, 0.05) == 0.2
    assert recency_gate(9, 1000, 0.2, 0.05) > 0.9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 10))
def test_recency_gate_in_unit_interval(count, age, alpha_min, decay):
    a = recency_gate(count, age, alpha_min, decay)
    assert 0.0 < a <= 1.0


def test_oap_mean_property_small():
    rng = np.random.default_rng(0)
    t = PrototypeTable(3)
    seen = {}
    for _ in range(300):
        c = int(rng.integers(0, 5))
        f = rng.standard_normal(3)
        seen.setdefault(c, []).append(f)
        oap_update(t, c, f)
    for c, fs in seen.items():
        assert np.allclose(t.prototype(c), np.mean(fs, axis=0), rtol=1e-12, atol=1e-12)
        assert t.count(c) == len(fs)


# --- linear head -----------------------------------------------------------

def test_base_step_example():
    h = LinearHead(2, lr=1.0)
    h.activate(0)
    h.activate(1)
    e = np.array([0.3, -0.7])
    base_update(h, e, 0)
    assert np.allclose(h.W[h.index(0)], 0.5 * e)
    assert np.allclose(h.W[h.index(1)], -0.5 * e)


def test_base_one_hot_prediction_is_fixed_point():
    h = LinearHead(2, lr=1.0)
    h.activate(0)
    before = h.W.copy()
    base_update(h, np.array([1.0, 2.0]), 0)  # single active class: softmax is exactly 1
    assert np.array_equal(h.W, before)


def test_inactive_rows_never_score():
    cfg = LearnerConfig(name="base")
    learner = make_learner(cfg, EmbeddingParams.init(2, 2))
    ep = build_episode([[(3, True, [1.0, 0.0]), (5, True, [0.0, 1.0])]])
    for ev in iterate_episode(ep):
        learner.update(ev)
    assert set(learner.predict(ep.frames[0]).scores) == {3, 5}


def test_unlabeled_event_changes_nothing():
    ep = build_episode([[(0, True, [1.0, 0.0]), (1, True, [0.0, 1.0]), (0, False, [1.0, 1.0])]])
    events = list(iterate_episode(ep, check_label_count=False))
    for name in LEARNER_NAMES:
        learner = make_learner(LearnerConfig(name=name), EmbeddingParams.init(2, 2))
        learner.update(events[0])
        learner.update(events[1])
        table_before = learner.state_digest()
        learner.update(events[2])
        learner._clock -= 1
        assert learner.state_digest() == table_before, name


def test_distillation_zero_at_snapshot():
    rng = np.random.default_rng(1)
    h = LinearHead(3, lr=0.5)
    for c in (0, 1, 2):
        h.activate(c)
    h.W[:] = rng.standard_normal(h.W.shape)
    e = rng.standard_normal(3)
    _, g_plain = head_loss_and_grad(h.W, h.ids, e, 1)
    _, g_dist = head_loss_and_grad(h.W, h.ids, e, 1, h.copy(), 5.0, 2.0)
    assert np.allclose(g_plain, g_dist, atol=1e-15)


def test_lwf_temperature_must_be_positive():
    h = LinearHead(2)
    with pytest.raises(ConfigError):
        lwf_update(h, None, np.ones(2), 0, 1.0, 0.0)


def _run(learner, episode):
    learner.reset_for_episode()
    for ev in iterate_episode(episode):
        if ev.frame.t % episode.T == 0:
            learner.on_environment_start(ev.frame.env_index)
        learner.update(ev)
    return learner


@pytest.fixture
def episode():
    cfg = WorldConfig(feature_dim=6, pool_size=10, classes_per_env=4, T=40, N=3, seed=2)
    return sample_episode(cfg, 17)


def test_lwf_without_distillation_is_base(episode):
    p = EmbeddingParams.init(6, 6)
    base = _run(make_learner(LearnerConfig(name="base"), p), episode)
    lwf = _run(make_learner(LearnerConfig(name="lwf", lambda_distill=0.0), p), episode)
    assert base.head.ids == lwf.head.ids
    assert np.array_equal(base.head.W, lwf.head.W)


def test_lwf_first_environment_is_plain_ce(episode):
    p = EmbeddingParams.init(6, 6)
    first = build_episode([[(f.true_class, f.labeled, f.features) for f in episode.environments[0].frames]])
    base = _run(make_learner(LearnerConfig(name="base"), p), first)
    lwf = _run(make_learner(LearnerConfig(name="lwf", lambda_distill=3.0), p), first)
    assert np.array_equal(base.head.W, lwf.head.W)


def test_gated_rule_reduces_to_running_mean(episode):
    p = EmbeddingParams.init(6, 6)
    oap = _run(make_learner(LearnerConfig(name="oap"), p), episode)
    cpm = _run(make_learner(LearnerConfig(name="cpm-lite", alpha_min=0.0, decay=0.0), p), episode)
    assert oap.table.ids == cpm.table.ids
    assert np.max(np.abs(oap.table.P - cpm.table.P)) <= 1e-12


def test_upper_bound_reset():
    p = EmbeddingParams.init(2, 2)
    learner = make_learner(LearnerConfig(name="upper-bound"), p)
    ep = build_episode([[(c, True, [1.0, c]) for c in (0, 1, 2)]])
    for ev in iterate_episode(ep):
        learner.update(ev)
    assert len(learner.table) == 3
    learner.on_environment_start(1)
    assert len(learner.table) == 0
    assert learner.predict(ep.frames[0]).argmax is None


def test_upper_bound_repeats_identical_environments():
    from driftbench.evaluator import run_episode
    rows = [(0, True, [1.0, 0.1]), (1, True, [0.1, 1.0]), (0, False, [0.9, 0.3]),
            (1, True, [0.4, 0.8]), (0, True, [1.0, -0.2]), (1, False, [0.2, 0.9])]
    ep = build_episode([rows, rows], label_fraction=4 / 6)
    res = run_episode(make_learner(LearnerConfig(name="upper-bound"), EmbeddingParams.init(2, 2)), ep)
    preds = [row.predicted_class for row in res.log]
    assert preds[:6] == preds[6:]
    # the evaluator's seen set is global, so the second copy also counts the
    # frames that precede each class's first label in that environment
    assert [r.counted for r in res.log[6:]] == [True] * 6


@pytest.mark.parametrize("name", LEARNER_NAMES)
def test_predict_is_pure(name, episode):
    learner = make_learner(LearnerConfig(name=name), EmbeddingParams.init(6, 6))
    events = list(iterate_episode(episode))
    for ev in events[:50]:
        learner.update(ev)
    digest = learner.state_digest()
    for fr in episode.frames[:20]:
        assert learner.predict(fr) == learner.predict(fr)
    assert learner.state_digest() == digest


@pytest.mark.parametrize("name", LEARNER_NAMES)
def test_snapshot_isolation(name, episode):
    learner = make_learner(LearnerConfig(name=name), EmbeddingParams.init(6, 6))
    events = list(iterate_episode(episode))
    for ev in events[:20]:
        learner.update(ev)
    snap = learner.snapshot()
    probe = episode.frames[::3]
    before = [snap.predict(f) for f in probe]
    batch = snap.predict_frames(probe).copy()
    for ev in events[20:120]:
        learner.update(ev)
    assert [snap.predict(f) for f in probe] == before
    assert np.array_equal(snap.predict_frames(probe), batch)


@pytest.mark.parametrize("name", LEARNER_NAMES)
def test_snapshot_batch_matches_single(name, episode):
    learner = _run(make_learner(LearnerConfig(name=name), EmbeddingParams.init(6, 6)), episode)
    snap = learner.snapshot()
    frames = episode.frames
    singles = [snap.predict(f).argmax for f in frames]
    assert list(snap.predict_frames(frames)) == singles


# --- objectives ------------------------------------------------------------

def test_oml_uniform_two_class_loss():
    # one labeled frame of each class, queries score identical cosine to both
    ep = build_episode([[(0, True, [1.0, 0.0]), (1, True, [0.0, 1.0])],
                        [(0, False, [1.0, 0.0]), (1, False, [0.0, 1.0])]], label_fraction=1.0)
    tape = Tape()
    p = EmbeddingParams(W=np.array([[1.0, 1.0], [0.0, 0.0]]))  # both frames embed to [1, 0]
    loss = proto_oml_loss(tape, p, ep, 1, logit_scale=10.0)
    assert float(loss.value) == pytest.approx(math.log(2), abs=1e-12)


def test_oml_certain_predictions_zero_loss():
    ep = build_episode([[(0, True, [1.0, 0.0]), (1, True, [0.0, 1.0])]], label_fraction=1.0)
    loss = proto_oml_loss(Tape(), EmbeddingParams.init(2, 2), ep, 1, logit_scale=1e4)
    assert float(loss.value) == pytest.approx(0.0, abs=1e-12)


def test_oml_needs_labels():
    ep = build_episode([[(0, False, [1.0, 0.0])]], label_fraction=0.0)
    with pytest.raises(UndefinedMetricError):
        proto_oml_loss(Tape(), EmbeddingParams.init(2, 2), ep, 1, 10.0)


def test_online_loss_matches_learner_predictions(episode):
    # the taped online loss uses exactly the prototypes the live learner holds
    cfg = LearnerConfig(name="cpm-lite")
    p = EmbeddingParams.init(6, 6, np.random.default_rng(0), kind="gaussian")
    plan = build_stream_plan(episode, "gated", cfg.alpha_min, cfg.decay)
    X = episode.feature_matrix()
    E = X @ p.W.T
    learner = make_learner(cfg, p)
    q = 0
    for ev in iterate_episode(episode):
        t = ev.frame.t
        if q < plan.n_queries and plan.query_frames[q] == t:
            P = plan.states[plan.mask[q]] @ E
            assert np.allclose(np.sort(P, axis=0), np.sort(learner.table.P, axis=0), atol=1e-10)
            q += 1
        learner.update(ev)
    assert q == plan.n_queries


def test_step_decay_schedule():
    assert step_decay_lr(0, 4000, 1e-4) == 1e-4
    assert step_decay_lr(1999, 4000, 1e-4) == 1e-4
    assert step_decay_lr(2000, 4000, 1e-4) == pytest.approx(1e-5)
    assert step_decay_lr(2999, 4000, 1e-4) == pytest.approx(1e-5)
    assert step_decay_lr(3000, 4000, 1e-4) == pytest.approx(1e-6)
    assert step_decay_lr(3999, 4000, 1e-4) == pytest.approx(1e-6)


def _online_value(world, params, seeds):
    cfg = LearnerConfig(name="oap")
    vals = []
    for s in seeds:
        loss = episode_objective(Tape(), params, sample_episode(world, s), cfg)
        vals.append(float(loss.value))
    return float(np.mean(vals))


def test_meta_train_reduces_online_loss():
    world = WorldConfig(feature_dim=6, pool_size=8, classes_per_env=3, T=30, N=2,
                        noise_sigma=0.0, context_sigma=0.0, seed=1)
    # a 2-d embedding starts with overlapping classes, leaving room to improve
    cfg = LearnerConfig(name="oap", embed_dim=2)
    init = EmbeddingParams.init(6, 2, np.random.default_rng(4), kind="gaussian")
    seeds = [101, 102, 103, 104]
    trained = meta_train(world, cfg, MetaTrainConfig(budget=4, lr=0.01), seeds, init=init)
    assert _online_value(world, trained, seeds) < _online_value(world, init, seeds)


def test_oml_weight_zero_matches_online_training():
    world = WorldConfig(feature_dim=5, pool_size=8, classes_per_env=3, T=20, N=3, seed=3)
    cfg = LearnerConfig(name="proto-oml", lambda_oml=0.0)
    a = meta_train(world, cfg, MetaTrainConfig(budget=3, lr=0.01), [1, 2, 3])
    b = meta_train(world, cfg, MetaTrainConfig(budget=3, lr=0.01), [1, 2, 3], use_oml=False)
    assert np.max(np.abs(a.W - b.W)) <= 1e-12


def test_oml_weight_zero_gradient_equals_online_gradient():
    world = WorldConfig(feature_dim=5, pool_size=8, classes_per_env=3, T=20, N=3, seed=3)
    ep = sample_episode(world, 8)
    p = EmbeddingParams.init(5, 5, np.random.default_rng(2), kind="gaussian")
    grads = []
    for use in (True, False):
        tape = Tape()
        loss = episode_objective(tape, p, ep, LearnerConfig(name="proto-oml", lambda_oml=0.0), use)
        grads.append(backward(tape, loss)["W"])
    assert np.max(np.abs(grads[0] - grads[1])) <= 1e-12


def test_learner_config_validation():
    with pytest.raises(ConfigError):
        LearnerConfig(name="nope").validate()
    with pytest.raises(ConfigError):
        LearnerConfig(temperature=0).validate()
    with pytest.raises(ConfigError):
        LearnerConfig(alpha_min=1.5).validate()
