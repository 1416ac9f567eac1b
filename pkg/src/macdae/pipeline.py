"""Stage functions shared by the CLI, the ablation recipe and the K sweep."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .data import (
    add_training_negatives,
    build_dataset,
    build_pretrain_set,
    convert_implicit,
    read_tsv,
)
from .errors import DataError
from .evaluation import evaluate_ranking
from .features import FeatureSpace
from .pretrain import pretrain_fit
from .ranker import RankerBatch, init_ranker, predict, ranker_fit

log = logging.getLogger(__name__)


def load_rows(cfg):
    """Read and convert the configured interaction file."""
    rows = read_tsv(cfg.data.path)
    rows = convert_implicit(
        rows,
        threshold=cfg.data.positive_threshold,
        min_reviews=cfg.data.min_reviews,
        scale=cfg.data.rating_scale,
    )
    if not rows:
        raise DataError("no interactions left after implicit conversion and filtering")
    return rows


def prepare(rows, cfg, exclude_columns=()):
    """Dataset plus freshly seeded embedding tables."""
    dataset = build_dataset(rows, split=cfg.data.split, seed=cfg.split_seed,
                            exclude_columns=exclude_columns)
    features = FeatureSpace.random(dataset.n_users, dataset.n_items, cfg.data.embedding_dim,
                                   dataset.encoder.width, seed=cfg.embedding_seed)
    return dataset, features


def as_batch(dataset, rows):
    batch = RankerBatch(
        np.array([r.user for r in rows], dtype=np.int64),
        np.array([r.item for r in rows], dtype=np.int64),
        dataset.side(rows),
    )
    return batch, np.array([r.label for r in rows], dtype=np.float64)


def pretrain_inputs(dataset, features):
    _, X = build_pretrain_set(dataset.train, features, dataset.encoder)
    return X


def run_pretrain(dataset, features, pretrain_cfg):
    return pretrain_fit(pretrain_inputs(dataset, features), pretrain_cfg)


def training_rows(dataset, rate, seed):
    extra = add_training_negatives(dataset.pretrain, dataset.catalog, dataset.positives, rate,
                                   seed=[seed, 5])
    return dataset.train + extra


def run_ranker(dataset, features, ranker_cfg, pretrained=None, train_negatives=0):
    if ranker_cfg.integration == "none":
        pretrained = None
    rows = training_rows(dataset, train_negatives, ranker_cfg.seed)
    batch, labels = as_batch(dataset, rows)
    model = init_ranker(ranker_cfg, features, pretrained)
    return ranker_fit(model, batch, labels)


def score_fn(model):
    def score(users, items, side):
        return predict(model, RankerBatch(users, items, side))
    return score


def run_evaluation(model, dataset, eval_cfg):
    metrics = evaluate_ranking(
        score_fn(model),
        dataset.test,
        dataset.side(dataset.test),
        dataset.catalog,
        dataset.positives,
        negatives=eval_cfg.negatives,
        ks=eval_cfg.k,
        seed=eval_cfg.seed,
    )
    keep = set()
    for name in metrics:
        if name == "auc" and "auc" in eval_cfg.metrics:
            keep.add(name)
        if name.startswith("ndcg@") and "ndcg" in eval_cfg.metrics:
            keep.add(name)
    return {k: v for k, v in metrics.items() if k in keep}


def run_experiment(rows, cfg, exclude_columns=()):
    """Ingest, optionally pre-train, train and evaluate. Returns the metric dict."""
    dataset, features = prepare(rows, cfg, exclude_columns)
    pretrained = None
    if cfg.ranker.integration != "none":
        pretrained, _ = run_pretrain(dataset, features, cfg.pretrain)
    model, _ = run_ranker(dataset, features, cfg.ranker, pretrained, cfg.data.train_negatives)
    return run_evaluation(model, dataset, cfg.evaluation)


@dataclass
class AblationRecipe:
    """Callable recipe for :func:`macdae.evaluation.feature_ablation`."""

    cfg: object

    def __call__(self, rows, exclude):
        cfg = replace(self.cfg, evaluation=replace(self.cfg.evaluation, metrics=("auc",)))
        metrics = run_experiment(rows, cfg, exclude)
        if "auc" not in metrics:
            raise DataError("test split cannot produce an AUC")
        return metrics["auc"]
