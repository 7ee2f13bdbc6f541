"""Online few-shot continual learning over drifting environment streams."""

__version__ = "0.1.0"

from .stream import (  # noqa: E402
    ClassId,
    Episode,
    Environment,
    FeatureFrame,
    Prediction,
    StreamEvent,
    iterate_episode,
    seen_set_after,
)
from .world import WorldConfig, load_episode, sample_episode, write_episode  # noqa: E402
from .learners import LearnerConfig, make_learner  # noqa: E402
from .evaluator import EvalConfig, aggregate, forgetting_metrics, run_episode  # noqa: E402
