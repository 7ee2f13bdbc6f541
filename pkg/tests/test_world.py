import numpy as np
import pytest

from driftbench.errors import ConfigError, FormatError
from driftbench.world import (
    WorldConfig, derive_seed, dumps_episode, load_episode, loads_episode, make_rng, pool_for,
    sample_class_pool, sample_environment, sample_episode, write_episode,
)


def test_pool_shape_and_determinism():
    cfg = WorldConfig(feature_dim=8, pool_size=5, classes_per_env=2)
    a = sample_class_pool(cfg, make_rng(1))
    b = sample_class_pool(cfg, make_rng(1))
    assert a.means.shape == (5, 8)
    assert np.array_equal(a.means, b.means)


def test_empty_pool_rejected():
    with pytest.raises(ConfigError):
        sample_class_pool(WorldConfig(pool_size=0), make_rng(0))


def test_too_many_classes_per_env():
    with pytest.raises(ConfigError):
        sample_episode(WorldConfig(feature_dim=2, pool_size=3, classes_per_env=4), 0)


def test_full_persistence_keeps_class_set():
    cfg = WorldConfig(feature_dim=3, pool_size=10, classes_per_env=4, persist_prob=1.0, T=20)
    pool = pool_for(cfg)
    rng = make_rng(9)
    first = sample_environment(pool, None, cfg, rng)
    second = sample_environment(pool, first.class_set, cfg, rng, env_index=1, t_offset=20)
    assert second.class_set == first.class_set


def test_exact_label_count():
    ep = sample_episode(WorldConfig(feature_dim=4, pool_size=10), 123)
    assert ep.N == 4 and len(ep.frames) == 400
    for env in ep.environments:
        assert env.n_labeled == 40


def test_every_present_class_gets_a_label():
    cfg = WorldConfig(feature_dim=2, pool_size=12, classes_per_env=10, T=12, label_fraction=0.85)
    for s in range(30):
        for env in sample_episode(cfg, s).environments:
            present = {f.true_class for f in env.frames}
            labeled = {f.true_class for f in env.frames if f.labeled}
            assert present == labeled


def test_zero_noise_features_are_centroid_plus_shift():
    cfg = WorldConfig(feature_dim=5, pool_size=6, classes_per_env=3, T=30, noise_sigma=0.0, context_sigma=0.7)
    ep = sample_episode(cfg, 4)
    pool = pool_for(cfg)
    for env in ep.environments:
        for f in env.frames:
            assert np.array_equal(f.features, pool.means[f.true_class] + env.context_shift)


def test_zero_noise_zero_context_is_centroid():
    cfg = WorldConfig(feature_dim=5, pool_size=6, classes_per_env=3, T=10, noise_sigma=0.0, context_sigma=0.0)
    pool = pool_for(cfg)
    for f in sample_episode(cfg, 2).frames:
        assert np.array_equal(f.features, pool.means[f.true_class])


def test_persistence_frequency():
    cfg = WorldConfig(feature_dim=2, pool_size=40, classes_per_env=6, persist_prob=0.5, T=10)
    pool = pool_for(cfg)
    rng = make_rng(77)
    kept = total = 0
    prev = sample_environment(pool, None, cfg, rng).class_set
    for _ in range(1000):
        env = sample_environment(pool, prev, cfg, rng)
        kept += len(prev & env.class_set)
        total += len(prev)
        prev = env.class_set
    assert abs(kept / total - 0.5) <= 0.05


def test_episode_determinism_and_seed_sensitivity():
    cfg = WorldConfig(feature_dim=6, pool_size=10, T=20)
    assert sample_episode(cfg, 11) == sample_episode(cfg, 11)
    assert sample_episode(cfg, 11) != sample_episode(cfg, 12)


def test_single_environment_episode():
    ep = sample_episode(WorldConfig(feature_dim=3, pool_size=8, N=1, T=10), 0)
    assert ep.N == 1


def test_derive_seed_distinct():
    seeds = {derive_seed(42, k) for k in range(1000)}
    assert len(seeds) == 1000


def test_round_trip(tmp_path):
    ep = sample_episode(WorldConfig(feature_dim=7, pool_size=9, T=15), 99)
    path = tmp_path / "e.dbench"
    write_episode(ep, path)
    assert load_episode(path) == ep


def test_round_trip_preserves_awkward_floats():
    ep = sample_episode(WorldConfig(feature_dim=3, pool_size=5, classes_per_env=2, T=5, N=2), 1)
    text = dumps_episode(ep)
    text = text.replace(text.splitlines()[-1].split(",")[4], repr(1e-310), 1)
    again = loads_episode(text)
    assert loads_episode(dumps_episode(again)) == again


def test_short_row_is_format_error():
    ep = sample_episode(WorldConfig(feature_dim=4, pool_size=5, classes_per_env=2, T=5, N=1), 1)
    lines = dumps_episode(ep).splitlines()
    idx = next(k for k, l in enumerate(lines) if l and l[0].isdigit())
    lines[idx] = lines[idx].rsplit(",", 1)[0]
    with pytest.raises(FormatError) as err:
        loads_episode("\n".join(lines) + "\n")
    assert err.value.line == idx + 1


@pytest.mark.parametrize("text", ["", "garbage\n", "DBENCH1 D=2 N=1 T=1 rho=1.0\n"])
def test_malformed_files(text):
    with pytest.raises(FormatError):
        loads_episode(text)


def test_non_finite_value_rejected():
    ep = sample_episode(WorldConfig(feature_dim=2, pool_size=4, classes_per_env=2, T=4, N=1), 1)
    lines = dumps_episode(ep).splitlines()
    idx = next(k for k, l in enumerate(lines) if l and l[0].isdigit())
    parts = lines[idx].split(",")
    parts[-1] = "nan"
    lines[idx] = ",".join(parts)
    with pytest.raises(FormatError):
        loads_episode("\n".join(lines) + "\n")
