import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from macdae.config import parse_config
from macdae.data import build_dataset
from macdae.errors import ConfigError, DimensionError, MetricError
from macdae.evaluation import (
    RankedList,
    auc,
    evaluate_ranking,
    feature_ablation,
    head_cosine_stats,
    hidden_moments,
    ndcg_at_k,
)
from macdae.pipeline import AblationRecipe
from macdae.pretrain import PretrainConfig, init_pretrain_model
from macdae.synthetic import planted_regime_rows, single_signal_rows


def brute_auc(pos, neg):
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_ndcg_examples():
    assert ndcg_at_k([1, 0, 0, 0, 0], 5) == 1.0
    assert ndcg_at_k([0, 0, 1, 0, 0], 5) == pytest.approx(0.5, abs=1e-15)
    assert ndcg_at_k([0] * 10 + [1], 10) == 0.0
    assert ndcg_at_k([0, 0, 0], 2) == 0.0


def test_ndcg_errors():
    with pytest.raises(MetricError):
        ndcg_at_k([1, 0], 0)
    with pytest.raises(MetricError):
        ndcg_at_k([], 3)
    with pytest.raises(MetricError):
        RankedList.from_scores([1, 2], [0.1, 0.2], [1, 2])


def test_ranked_list_breaks_ties_by_item():
    ranked = RankedList.from_scores([7, 3, 5], [0.5, 0.5, 0.9], [0, 1, 0])
    assert [i for i, _, _ in ranked.entries] == [5, 3, 7]
    assert ranked.relevance == [0, 1, 0]


@given(st.lists(st.integers(0, 1), min_size=1, max_size=12), st.integers(1, 12))
def test_ndcg_bounded_and_ideal(rel, k):
    v = ndcg_at_k(rel, k)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert ndcg_at_k(sorted(rel, reverse=True), k) == (1.0 if sum(rel) else 0.0)


def test_auc_examples():
    assert auc([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert auc([0.8, 0.4], [0.6, 0.2]) == 0.75
    assert auc([0.3] * 3, [0.3] * 4) == 0.5
    with pytest.raises(MetricError):
        auc([], [0.1])


@given(st.lists(st.integers(0, 5), min_size=1, max_size=15), st.lists(st.integers(0, 5), min_size=1, max_size=15))
def test_auc_equals_pair_counting(pos, neg):
    assert auc(pos, neg) == brute_auc(pos, neg)
    assert auc(neg, pos) == pytest.approx(1.0 - auc(pos, neg), abs=1e-12)


def test_hidden_moments():
    assert hidden_moments([[2.0, 2.0]]) == (2.0, 0.0)
    assert hidden_moments([[1.0, 3.0]]) == (2.0, 1.0)
    with pytest.raises(DimensionError):
        hidden_moments([[1.0], [1.0, 2.0]])


def _vae(mu_bias):
    model = init_pretrain_model(PretrainConfig(kind="vae", heads=2, hidden_dim=4, input_dim=3))
    model.params["mu.W"][...] = 0.0
    model.params["mu.b"][...] = mu_bias
    return model


def test_head_cosine_identical_and_orthogonal():
    X = np.random.default_rng(0).random((5, 3))
    same = head_cosine_stats(_vae([1.0, 2.0, 1.0, 2.0]), X)
    assert same.mean_cosine == pytest.approx(1.0, abs=1e-15)
    orth = head_cosine_stats(_vae([1.0, 0.0, 0.0, 1.0]), X)
    assert orth.mean_cosine == 0.0
    np.testing.assert_array_equal(orth.cosine_matrix, np.eye(2))


def test_head_cosine_matrix_shape():
    model = init_pretrain_model(PretrainConfig(kind="macdae", heads=4, hidden_dim=8, input_dim=3))
    rep = head_cosine_stats(model, np.random.default_rng(1).random((6, 3)))
    C = rep.cosine_matrix
    assert C.shape == (4, 4)
    np.testing.assert_array_equal(C, C.T)
    np.testing.assert_array_equal(np.diag(C), 1.0)
    assert rep.to_dict()["cosine_matrix"][0][0] == 1.0


def test_head_cosine_needs_two_heads():
    model = init_pretrain_model(PretrainConfig(kind="dae", heads=1, hidden_dim=4, input_dim=3))
    with pytest.raises(ConfigError):
        head_cosine_stats(model, np.ones((1, 3)))


def _oracle_scorer(dataset):
    positive = {(r.user, r.item) for r in dataset.test if r.label == 1}

    def score(users, items, side):
        return np.array([float((u, i) in positive) + 1e-3 * i for u, i in zip(users, items)])
    return score


def test_evaluate_with_an_oracle_scorer():
    ds = build_dataset(planted_regime_rows(n_users=20, n_items=100, n_rows=800, seed=0), seed=0)
    m = evaluate_ranking(_oracle_scorer(ds), ds.test, ds.side(ds.test), ds.catalog, ds.positives,
                         negatives=20, ks=(5, 10), seed=0)
    assert set(m) == {"ndcg@5", "ndcg@10", "auc"}
    assert m["ndcg@5"] == m["ndcg@10"] == 1.0
    scores = _oracle_scorer(ds)([r.user for r in ds.test], [r.item for r in ds.test], None)
    labels = np.array([r.label for r in ds.test])
    assert m["auc"] == brute_auc(scores[labels == 1], scores[labels == 0])


def test_evaluate_constant_scorer():
    ds = build_dataset(planted_regime_rows(n_users=20, n_items=100, n_rows=800, seed=0), seed=0)
    m = evaluate_ranking(lambda u, i, s: np.zeros(len(u)), ds.test, ds.side(ds.test), ds.catalog,
                         ds.positives, negatives=20, ks=(5,), seed=0)
    assert m["auc"] == 0.5
    assert 0.0 <= m["ndcg@5"] <= 1.0


def _recipe(seed):
    return AblationRecipe(parse_config({
        "seed": seed,
        "data": {"path": "unused.tsv", "embedding_dim": 4, "train_negatives": 0},
        "ranker": {"hidden_sizes": [8], "epochs": 5, "learning_rate": 0.01, "batch_size": 64},
        "evaluation": {"negatives": 5},
    }))


def test_ablating_noise_and_signal():
    for seed in range(5):
        rows = single_signal_rows(seed=seed)
        recipe = _recipe(seed)
        assert abs(feature_ablation(rows, "d.noise", recipe)) < 0.01
        assert feature_ablation(rows, "d.signal", recipe) > 0.1


def test_ablation_unknown_group():
    with pytest.raises(ConfigError):
        feature_ablation(single_signal_rows(n_rows=50), "d.missing", _recipe(0))


def test_ndcg_matches_definition_on_small_lists():
    for n in range(1, 6):
        for rel in itertools.product([0, 1], repeat=n):
            for k in range(1, n + 1):
                dcg = sum(r / math.log2(i + 2) for i, r in enumerate(rel[:k]))
                ideal = sorted(rel, reverse=True)
                idcg = sum(r / math.log2(i + 2) for i, r in enumerate(ideal[:k]))
                assert ndcg_at_k(list(rel), k) == pytest.approx(dcg / idcg if idcg else 0.0, abs=1e-12)
