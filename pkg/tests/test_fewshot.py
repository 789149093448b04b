import math
import random
import struct

import numpy as np
import pytest

from fsl_pipeline.errors import FormatError, ProtocolError
from fsl_pipeline.fewshot import (Episode, EpisodeProtocol, FeatureSet, SplitTag, dumps_features, evaluate,
                                  load_features, loads_features, ncm_classify, sample_episode, save_features,
                                  synthetic_features)


def _random_set(rng, classes=20, per_class=600, dim=64, ids=None):
    ids = ids if ids is not None else range(classes)
    return FeatureSet.from_mapping({cid: rng.standard_normal((per_class, dim)).astype(np.float32) for cid in ids})


# -- PEFF ------------------------------------------------------------------

def test_peff_round_trip(tmp_path, rng):
    fs = _random_set(rng)
    path = tmp_path / "novel.peff"
    save_features(path, fs)
    back = load_features(path)
    assert back.split_tag is SplitTag.NOVEL
    assert back.feature_dim == 64 and back.num_classes == 20 and back.min_population == 600
    for (a, va), (b, vb) in zip(fs.classes, back.classes):
        assert a == b
        np.testing.assert_array_equal(va, vb)


def test_peff_byte_layout():
    fs = FeatureSet.from_mapping({7: np.array([[1.0, 2.0]], np.float32)})
    data = dumps_features(fs)
    assert data[:4] == b"PEFF"
    assert struct.unpack("<IIIII", data[4:24]) == (1, 2, 1, 7, 1)
    assert struct.unpack("<2f", data[24:]) == (1.0, 2.0)


def test_peff_dimension_inconsistency():
    good = dumps_features(FeatureSet.from_mapping({0: np.ones((3, 4), np.float32),
                                                   1: np.ones((3, 4), np.float32)}))
    with pytest.raises(FormatError, match="dimension inconsistency"):
        loads_features(good[:-4])
    with pytest.raises(FormatError, match="dimension inconsistency"):
        loads_features(good + b"\0\0\0\0")
    with pytest.raises(ProtocolError, match="dimension inconsistency"):
        FeatureSet.from_mapping({0: np.ones((3, 4)), 1: np.ones((3, 5))})


def test_peff_empty_file_and_bad_version():
    with pytest.raises(FormatError, match="bad magic"):
        loads_features(b"")
    with pytest.raises(FormatError):
        loads_features(b"PEFF" + struct.pack("<III", 9, 4, 0))


def test_peff_empty_class():
    data = b"PEFF" + struct.pack("<IIIII", 1, 4, 1, 0, 0)
    with pytest.raises(ProtocolError, match="empty class"):
        loads_features(data)


# -- sampling --------------------------------------------------------------

def test_sample_episode_geometry(rng):
    fs = _random_set(rng, per_class=30, dim=8)
    ep = sample_episode(fs, EpisodeProtocol(5, 1, 15), 0)
    assert ep.support.shape == (5, 1, 8) and ep.queries.shape == (5, 15, 8)
    assert len(set(ep.class_ids)) == 5 and list(ep.class_ids) == sorted(ep.class_ids)
    assert len(ep.query_labels) == 75


def test_sample_episode_exhaustive(rng):
    fs = _random_set(rng, classes=4, per_class=6, dim=3)
    ep = sample_episode(fs, EpisodeProtocol(4, 2, 4), 3)
    assert ep.class_ids == (0, 1, 2, 3)
    for i in range(4):
        rows = np.concatenate([ep.support_index[i], ep.query_index[i]])
        assert sorted(rows) == list(range(6))


def test_sample_episode_disjoint_and_deterministic(rng):
    fs = _random_set(rng, classes=10, per_class=25, dim=4)
    proto = EpisodeProtocol(5, 5, 15, seed=99)
    for idx in range(200):
        ep = sample_episode(fs, proto, idx)
        for s, q in zip(ep.support_index, ep.query_index):
            assert not set(s) & set(q) and len(set(q)) == len(q)
    a, b = sample_episode(fs, proto, 17), sample_episode(fs, proto, 17)
    np.testing.assert_array_equal(a.queries, b.queries)
    np.testing.assert_array_equal(a.support_index, b.support_index)
    c = sample_episode(fs, EpisodeProtocol(5, 5, 15, seed=100), 17)
    assert not np.array_equal(a.query_index, c.query_index) or a.class_ids != c.class_ids


def test_protocol_infeasible(rng):
    fs = _random_set(rng, classes=3, per_class=5, dim=2)
    with pytest.raises(ProtocolError, match="infeasible"):
        sample_episode(fs, EpisodeProtocol(4, 1, 1), 0)
    with pytest.raises(ProtocolError, match="infeasible"):
        evaluate(fs, EpisodeProtocol(2, 1, 5))
    with pytest.raises(ProtocolError):
        EpisodeProtocol(0, 1, 1)


# -- NCM -------------------------------------------------------------------

def _episode(support, queries, ids):
    support = np.asarray(support, float)
    queries = np.asarray(queries, float)
    n, k = support.shape[:2]
    q = queries.shape[1]
    return Episode(tuple(ids), support, queries, np.zeros((n, k), int), np.zeros((n, q), int))


def test_ncm_query_equals_prototype():
    e1, e2 = [1.0, 0.0], [0.0, 1.0]
    res = ncm_classify(_episode([[e1], [e2]], [[e1], [e2]], [3, 8]))
    assert res.predictions.tolist() == [3, 8] and res.accuracy == 1.0


def test_ncm_tie_breaks_to_lowest_id():
    e1, e2 = [1.0, 0.0], [0.0, 1.0]
    mid = [1.0, 1.0]
    res = ncm_classify(_episode([[e1], [e2]], [[mid], [mid]], [4, 9]))
    assert res.predictions.tolist() == [4, 4]
    assert res.accuracy == 0.5


def test_ncm_zero_norm():
    with pytest.raises(ProtocolError, match="zero-norm"):
        ncm_classify(_episode([[[1.0, 0.0]], [[0.0, 0.0]]], [[[1.0, 0.0]], [[0.0, 1.0]]], [0, 1]))


def _oracle_accuracy(trials, dim=16, sigma=0.5, seed=2024):
    """Fresh draws per trial from the two Gaussians, NCM rule written out with the math module."""
    r = random.Random(seed)
    means = [[0.5 if j == 0 else 0.0 for j in range(dim)], [-0.5 if j == 0 else 0.0 for j in range(dim)]]

    def draw(c):
        return [m + sigma * r.gauss(0.0, 1.0) for m in means[c]]

    def unit(v):
        n = math.sqrt(sum(x * x for x in v))
        return [x / n for x in v]

    correct = 0
    for _ in range(trials):
        protos = [unit(draw(0)), unit(draw(1))]
        label = r.randrange(2)
        q = unit(draw(label))
        d = [math.dist(q, p) for p in protos]
        pred = 0 if d[0] <= d[1] else 1
        correct += pred == label
    return correct / trials


def test_ncm_matches_monte_carlo_oracle():
    dim = 16
    e1 = np.eye(dim)[0]
    fs = synthetic_features([0.5 * e1, -0.5 * e1], per_class=600, noise=0.5, seed=11)
    res = evaluate(fs, EpisodeProtocol(2, 1, 15, episodes=2000, seed=5))
    oracle = _oracle_accuracy(20_000, dim)
    assert 0.55 < oracle < 0.95
    assert abs(res.mean_accuracy - oracle) <= 0.02


# -- evaluate --------------------------------------------------------------

def test_evaluate_separated_is_perfect():
    fs = synthetic_features(list(np.eye(10)), per_class=20, noise=0.0)
    res = evaluate(fs, EpisodeProtocol(5, 1, 15, episodes=500))
    assert res.mean_accuracy == 1.0 and res.ci95_halfwidth == 0.0 and res.episodes == 500


def test_evaluate_chance_level(rng):
    fs = _random_set(rng, classes=20, per_class=100, dim=16)
    res = evaluate(fs, EpisodeProtocol(5, 1, 15, episodes=2000, seed=1))
    assert abs(res.mean_accuracy - 0.2) <= 3 * res.ci95_halfwidth


def test_evaluate_ci_formula(rng):
    fs = _random_set(rng, classes=8, per_class=30, dim=6)
    proto = EpisodeProtocol(3, 2, 5, episodes=300, seed=4)
    accs = [ncm_classify(sample_episode(fs, proto, i)).accuracy for i in range(300)]
    res = evaluate(fs, proto)
    mean = sum(accs) / len(accs)
    sd = math.sqrt(sum((a - mean) ** 2 for a in accs) / len(accs))
    assert res.mean_accuracy == pytest.approx(mean, abs=1e-12)
    assert res.ci95_halfwidth == pytest.approx(1.96 * sd / math.sqrt(300), abs=1e-12)


def test_evaluate_deterministic_and_thread_invariant(rng):
    fs = _random_set(rng, classes=12, per_class=40, dim=8)
    proto = EpisodeProtocol(5, 1, 15, episodes=400, seed=7)
    base = evaluate(fs, proto)
    assert evaluate(fs, proto) == base
    for t in (2, 4, 7):
        assert evaluate(fs, proto, threads=t).to_json() == base.to_json()


def test_scale_invariance(rng):
    fs = _random_set(rng, classes=8, per_class=30, dim=8)
    scaled = FeatureSet.from_mapping({cid: v * np.float32(37.5) for cid, v in fs.classes})
    proto = EpisodeProtocol(5, 1, 10, seed=3)
    for i in range(50):
        a = ncm_classify(sample_episode(fs, proto, i))
        b = ncm_classify(sample_episode(scaled, proto, i))
        np.testing.assert_array_equal(a.predictions, b.predictions)


def test_permuting_class_ids(rng):
    data = {cid: rng.standard_normal((20, 6)).astype(np.float32) for cid in range(6)}
    perm = {0: 50, 1: 40, 2: 30, 3: 20, 4: 10, 5: 0}   # order reversing relabel
    ep = sample_episode(FeatureSet.from_mapping(data), EpisodeProtocol(3, 2, 4), 0)
    res = ncm_classify(ep)
    order = np.argsort([perm[c] for c in ep.class_ids])
    relabeled = Episode(tuple(perm[ep.class_ids[i]] for i in order), ep.support[order], ep.queries[order],
                        ep.support_index[order], ep.query_index[order])
    res2 = ncm_classify(relabeled)
    want = np.array([perm[p] for p in res.predictions]).reshape(3, 4)[order].reshape(-1)
    np.testing.assert_array_equal(res2.predictions, want)
    assert res2.accuracy == res.accuracy


def test_label_shuffled_chance(rng):
    fs = synthetic_features(list(3 * np.eye(10)), per_class=60, noise=0.3, seed=2)
    pooled = np.concatenate([v for _, v in fs.classes])
    rng.shuffle(pooled)
    shuffled = FeatureSet.from_mapping({cid: pooled[cid * 60:(cid + 1) * 60] for cid in range(10)})
    res = evaluate(shuffled, EpisodeProtocol(5, 1, 15, episodes=2000))
    assert abs(res.mean_accuracy - 0.2) <= 3 * res.ci95_halfwidth


def test_eval_result_json():
    text = evaluate(synthetic_features(list(np.eye(5)), 20, 0.0), EpisodeProtocol(5, 1, 5, episodes=10)).to_json()
    assert text.startswith("{") and '"mean_accuracy": 1.0' in text
