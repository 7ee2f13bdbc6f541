import numpy as np
import pytest

from driftbench.stream import Environment, Episode, FeatureFrame
from driftbench.world import WorldConfig


def build_episode(envs, seed=0, label_fraction=None):
    """Episode from nested lists of (class, labeled, features) per environment."""
    out, t = [], 0
    for i, rows in enumerate(envs):
        frames = []
        for c, lab, f in rows:
            frames.append(FeatureFrame(t, i, np.asarray(f, dtype=float), c, lab))
            t += 1
        D = len(rows[0][2])
        out.append(Environment(i, frames, {c for c, _, _ in rows}, np.zeros(D)))
    if label_fraction is None:
        T = len(envs[0])
        label_fraction = sum(lab for _, lab, _ in envs[0]) / T
    return Episode(out, seed, label_fraction)


@pytest.fixture
def tiny_world():
    return WorldConfig(feature_dim=4, pool_size=8, classes_per_env=3, T=10, N=3,
                       noise_sigma=0.3, context_sigma=0.3, seed=5)


# --- acceptance reporting ----------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
