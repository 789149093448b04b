"""N-way K-shot episode sampling, nearest-class-mean classification, evaluation."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ProtocolError
from .features import FeatureSet

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class EpisodeProtocol:
    n_way: int = 5
    k_shot: int = 1
    q_queries: int = 15
    episodes: int = 10_000
    seed: int = 0

    def __post_init__(self):
        for name in ("n_way", "k_shot", "q_queries", "episodes"):
            if getattr(self, name) < 1:
                raise ProtocolError(f"{name} must be positive, got {getattr(self, name)}")

    def check(self, fs: FeatureSet) -> None:
        if self.n_way > fs.num_classes:
            raise ProtocolError(f"protocol infeasible: {self.n_way}-way over {fs.num_classes} classes")
        need = self.k_shot + self.q_queries
        if need > fs.min_population:
            raise ProtocolError(
                f"protocol infeasible: {need} samples per class but smallest class has {fs.min_population}")


@dataclass(frozen=True)
class Episode:
    class_ids: Tuple[int, ...]      # ascending
    support: np.ndarray             # (n_way, k_shot, dim)
    queries: np.ndarray             # (n_way, q, dim); row i belongs to class_ids[i]
    support_index: np.ndarray       # (n_way, k_shot) row indices into each class
    query_index: np.ndarray         # (n_way, q)

    @property
    def query_labels(self) -> np.ndarray:
        q = self.queries.shape[1]
        return np.repeat(np.asarray(self.class_ids), q)


@dataclass(frozen=True)
class Classification:
    predictions: np.ndarray   # class id per query, in query_labels order
    labels: np.ndarray
    accuracy: float


@dataclass(frozen=True)
class EvalResult:
    mean_accuracy: float
    ci95_halfwidth: float
    episodes: int

    def to_json(self) -> str:
        return json.dumps({"mean_accuracy": self.mean_accuracy, "ci95_halfwidth": self.ci95_halfwidth,
                           "episodes": self.episodes}, indent=1, sort_keys=True) + "\n"


def episode_rng(seed: int, episode_index: int) -> np.random.Generator:
    """Counter-style stream: Philox keyed by (seed, episode index), independent of call order."""
    s = seed & _U64
    ss = np.random.SeedSequence([s & 0xFFFFFFFF, s >> 32, episode_index & _U64])
    return np.random.Generator(np.random.Philox(ss))


def sample_episode(fs: FeatureSet, proto: EpisodeProtocol, episode_index: int) -> Episode:
    proto.check(fs)
    rng = episode_rng(proto.seed, episode_index)
    picked = np.sort(rng.choice(fs.num_classes, size=proto.n_way, replace=False))
    # ties break to the lowest class id, so keep the episode ordered by id
    picked = sorted(picked, key=lambda i: fs.classes[i][0])
    take = proto.k_shot + proto.q_queries
    support, queries, s_idx, q_idx = [], [], [], []
    for ci in picked:
        vecs = fs.classes[ci][1]
        rows = rng.choice(vecs.shape[0], size=take, replace=False)
        s_idx.append(rows[:proto.k_shot])
        q_idx.append(rows[proto.k_shot:])
        support.append(vecs[rows[:proto.k_shot]])
        queries.append(vecs[rows[proto.k_shot:]])
    return Episode(
        class_ids=tuple(fs.classes[ci][0] for ci in picked),
        support=np.stack(support),
        queries=np.stack(queries),
        support_index=np.stack(s_idx),
        query_index=np.stack(q_idx),
    )


def _l2_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ProtocolError("zero-norm feature vector cannot be normalized")
    return x / norms


def ncm_classify(episode: Episode) -> Classification:
    """Assign each query to the nearest normalized-support mean.

    Queries are scored one by one (no transductive use of the query set).
    """
    ids = np.asarray(episode.class_ids)
    order = np.argsort(ids, kind="stable")
    protos = _l2_normalize(episode.support).mean(axis=1)[order]   # (n_way, dim), ascending id
    dim = episode.queries.shape[-1]
    q = _l2_normalize(episode.queries.reshape(-1, dim))
    dist = np.sqrt(((q[:, None, :] - protos[None, :, :]) ** 2).sum(axis=-1))
    # argmin returns the first minimum, i.e. the lowest class id on ties
    preds = ids[order][np.argmin(dist, axis=1)]
    labels = episode.query_labels
    return Classification(preds, labels, float(np.mean(preds == labels)))


def _run_range(fs: FeatureSet, proto: EpisodeProtocol, start: int, stop: int) -> np.ndarray:
    return np.array([ncm_classify(sample_episode(fs, proto, i)).accuracy for i in range(start, stop)])


def evaluate(fs: FeatureSet, proto: EpisodeProtocol, threads: int = 1) -> EvalResult:
    """Mean accuracy over ``proto.episodes`` episodes with a 95% normal interval."""
    proto.check(fs)
    n = proto.episodes
    if threads <= 1:
        accs = _run_range(fs, proto, 0, n)
    else:
        bounds = np.linspace(0, n, min(threads * 4, n) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(lambda ab: _run_range(fs, proto, *ab), zip(bounds[:-1], bounds[1:]))
            accs = np.concatenate(list(parts))
    mean = float(np.mean(accs))
    ci = 1.96 * float(np.std(accs)) / math.sqrt(n)
    return EvalResult(mean, ci, n)
