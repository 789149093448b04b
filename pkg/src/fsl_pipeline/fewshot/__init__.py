from .episodes import (Classification, Episode, EpisodeProtocol, EvalResult, evaluate, ncm_classify,
                       sample_episode)
from .features import (FeatureSet, SplitTag, dumps_features, load_features, loads_features,
                       save_features, synthetic_features)

__all__ = [
    "Classification", "Episode", "EpisodeProtocol", "EvalResult", "FeatureSet", "SplitTag",
    "dumps_features", "evaluate", "load_features", "loads_features", "ncm_classify",
    "sample_episode", "save_features", "synthetic_features",
]
