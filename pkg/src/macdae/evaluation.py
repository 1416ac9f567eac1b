"""Ranking metrics, latent-representation analysis, and feature ablation."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import negative_sample, parse_groups, context_columns
from .errors import ConfigError, DimensionError, MetricError
from .pretrain import encode_heads, extract_representation

TIE_BREAK = "item_id_ascending"


@dataclass(frozen=True)
class RankedList:
    """(item, score, relevance) triples sorted by descending score."""

    entries: tuple
    tie_break: str = TIE_BREAK

    @classmethod
    def from_scores(cls, items, scores, relevance):
        rows = sorted(zip(items, scores, relevance), key=lambda t: (-t[1], t[0]))
        for _, _, rel in rows:
            if rel not in (0, 1):
                raise MetricError("relevance must be binary")
        return cls(tuple((int(i), float(s), int(r)) for i, s, r in rows))

    @property
    def relevance(self):
        return [r for _, _, r in self.entries]

    def __len__(self):
        return len(self.entries)


def ndcg_at_k(ranked, k):
    """Binary-gain NDCG@k; 0 when the list holds no relevant item."""
    if k < 1:
        raise MetricError("k must be >= 1")
    rel = ranked.relevance if isinstance(ranked, RankedList) else list(ranked)
    if not rel:
        raise MetricError("cannot score an empty list")
    dcg = sum(r / math.log2(rank + 1) for rank, r in enumerate(rel[:k], start=1))
    n_rel = sum(rel)
    if n_rel == 0:
        return 0.0
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(k, n_rel) + 1))
    return dcg / idcg


def auc(pos_scores, neg_scores):
    """P(random positive outscores random negative), ties counted as 1/2.

    Computed from the Mann-Whitney rank sum, which equals exact pair counting.
    """
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUC needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def auc_from_labels(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    return auc(scores[labels == 1], scores[labels == 0])


# ---------------------------------------------------------------------------
# analysis


@dataclass
class AnalysisReport:
    mean_cosine: float
    cosine_matrix: np.ndarray
    mean_of_means: float
    mean_of_variances: float

    def to_dict(self):
        return {
            "mean_cosine": self.mean_cosine,
            "cosine_matrix": self.cosine_matrix.tolist(),
            "mean_of_means": self.mean_of_means,
            "mean_of_variances": self.mean_of_variances,
        }


def hidden_moments(vectors):
    """Average over vectors of each vector's coordinate mean and population variance."""
    if len(vectors) == 0:
        raise DimensionError("need at least one vector")
    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise DimensionError(f"vectors have different lengths: {sorted(lengths)}")
    V = np.asarray([np.asarray(v, dtype=np.float64) for v in vectors])
    return float(V.mean(axis=1).mean()), float(V.var(axis=1).mean())


def head_cosine_stats(model, inputs):
    """Pairwise cosine between the K unweighted heads, averaged over inputs."""
    K = model.config.heads
    if K < 2:
        raise ConfigError("head cosine statistics need at least two heads", field="heads")
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    H = encode_heads(model, X)
    norms = np.linalg.norm(H, axis=2)
    if np.any(norms == 0.0):
        raise MetricError("a head has zero norm")
    U = H / norms[:, :, None]
    C = np.eye(K)
    pair_means = []
    for i in range(K):
        for j in range(i + 1, K):
            c = float(np.clip(np.sum(U[:, i] * U[:, j], axis=1), -1.0, 1.0).mean())
            C[i, j] = C[j, i] = c
            pair_means.append(c)
    rep = extract_representation(model, X).values
    m, v = hidden_moments(rep)
    return AnalysisReport(float(np.mean(pair_means)), C, m, v)


# ---------------------------------------------------------------------------
# evaluation protocol


def evaluate_ranking(score_fn, test_rows, side, catalog, exclude, negatives=50, ks=(5, 10), seed=0):
    """Sampled-negative NDCG@k for every positive test row, plus test AUC.

    ``score_fn(users, items, side)`` returns scores for aligned arrays.
    ``side`` holds the encoded context of each test row; sampled negatives
    reuse the context of the positive they are ranked against. NDCG is the
    uniform mean over (user, positive) lists. AUC uses the labeled test rows
    when both classes are present, otherwise the pooled positive-vs-sampled
    scores.
    """
    rng = np.random.default_rng(seed)
    ndcgs = {k: [] for k in ks}
    pooled_pos, pooled_neg = [], []
    for n, r in enumerate(test_rows):
        if r.label != 1:
            continue
        negs = negative_sample(r.user, catalog, exclude, negatives, rng)
        items = np.array([r.item] + negs)
        users = np.full(items.size, r.user)
        scores = np.asarray(score_fn(users, items, np.repeat(side[n:n + 1], items.size, axis=0)))
        ranked = RankedList.from_scores(items, scores, [1] + [0] * len(negs))
        for k in ks:
            ndcgs[k].append(ndcg_at_k(ranked, k))
        pooled_pos.append(scores[0])
        pooled_neg.extend(scores[1:])
    if not pooled_pos:
        raise MetricError("test split has no positive rows")
    out = {f"ndcg@{k}": float(np.mean(v)) for k, v in ndcgs.items()}
    labels = np.array([r.label for r in test_rows])
    if 0 < labels.sum() < labels.size:
        users = np.array([r.user for r in test_rows])
        items = np.array([r.item for r in test_rows])
        out["auc"] = auc_from_labels(labels, score_fn(users, items, side))
    elif pooled_neg:
        out["auc"] = auc(pooled_pos, pooled_neg)
    return out


def feature_ablation(rows, group, recipe):
    """AUC(full) - AUC(without ``group``) under an otherwise identical recipe.

    ``recipe(rows, exclude)`` trains from scratch with the listed context
    columns removed and returns test AUC.
    """
    columns = parse_groups(group)
    known = set(context_columns(rows))
    missing = [c for c in columns if c not in known]
    if not columns or missing:
        raise ConfigError(f"unknown feature group {group!r}", field="ablation.groups")
    return recipe(rows, ()) - recipe(rows, tuple(columns))
