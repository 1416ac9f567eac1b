"""Ingestion: TSV parsing, implicit-feedback conversion, splits, negative sampling.

Input files are tab-separated with a header. Required columns are
``user_id``, ``item_id`` and one of ``rating`` / ``label``; an optional
``timestamp`` follows, then context columns prefixed ``c.`` (categorical,
one-hot encoded with an OOV bucket) or ``d.`` (dense, min-max scaled to
[0, 1]).
"""

import csv
import hashlib
import json
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, SamplingError

log = logging.getLogger(__name__)

SPLIT_STRATEGIES = ("ratio", "leave_one_out", "time")
OOV_TOKEN = "<oov>"


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    rating: float = math.nan
    label: int = None
    timestamp: float = None
    context: dict = field(default_factory=dict, hash=False, compare=False)
    row_id: int = -1


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


# ---------------------------------------------------------------------------
# TSV


def read_tsv(path):
    """Parse an interaction file into a list of :class:`Interaction`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}", field="data.path")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        for col in ("user_id", "item_id"):
            if col not in header:
                raise DataError(f"{path}: missing required column {col!r}")
        if ("rating" in header) == ("label" in header):
            raise DataError(f"{path}: exactly one of 'rating' or 'label' is required")
        for col in header:
            if col not in ("user_id", "item_id", "rating", "label", "timestamp") and not (
                col.startswith("c.") or col.startswith("d.")
            ):
                raise DataError(f"{path}: unrecognized column {col!r}")
        idx = {c: i for i, c in enumerate(header)}
        ctx_cols = [c for c in header if c.startswith(("c.", "d."))]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                user = int(rec[idx["user_id"]])
                item = int(rec[idx["item_id"]])
                rating = float(rec[idx["rating"]]) if "rating" in idx else math.nan
                label = int(float(rec[idx["label"]])) if "label" in idx else None
                ts = rec[idx["timestamp"]].strip() if "timestamp" in idx else ""
                ts = float(ts) if ts else None
                context = {}
                for c in ctx_cols:
                    raw = rec[idx[c]].strip()
                    context[c] = float(raw) if c.startswith("d.") else raw
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if user < 0 or item < 0:
                raise DataError(f"{path}:{lineno}: ids must be non-negative")
            if label is not None and label not in (0, 1):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1")
            for c in ctx_cols:
                if c.startswith("d.") and not math.isfinite(context[c]):
                    raise DataError(f"{path}:{lineno}: dense column {c} is not finite")
            rows.append(Interaction(user, item, rating, label, ts, context, row_id=len(rows)))
    return rows


def context_columns(rows):
    cols = []
    for r in rows:
        for c in r.context:
            if c not in cols:
                cols.append(c)
    return cols


def write_tsv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = context_columns(rows)
    has_label = any(r.label is not None for r in rows)
    has_ts = any(r.timestamp is not None for r in rows)
    header = ["user_id", "item_id", "label" if has_label else "rating"]
    if has_ts:
        header.append("timestamp")
    header += cols
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for r in rows:
            rec = [r.user, r.item, r.label if has_label else repr(r.rating)]
            if has_ts:
                rec.append("" if r.timestamp is None else repr(r.timestamp))
            for c in cols:
                v = r.context.get(c, "")
                rec.append(repr(v) if isinstance(v, float) else v)
            w.writerow(rec)


# ---------------------------------------------------------------------------
# conversion and filtering


def convert_implicit(rows, threshold=4.0, min_reviews=20, scale=(1.0, 5.0)):
    """Map star ratings to 0/1 labels and drop users with too few interactions.

    Rows that already carry a 0/1 label keep it. Ratings outside ``scale``
    are rejected.
    """
    lo, hi = scale
    out = []
    for r in rows:
        if r.label is None:
            if not (lo <= r.rating <= hi):
                raise DataError(f"rating {r.rating} outside the star scale [{lo}, {hi}]")
            r = replace(r, label=int(r.rating >= threshold))
        out.append(r)
    if min_reviews > 0:
        counts = defaultdict(int)
        for r in out:
            counts[r.user] += 1
        out = [r for r in out if counts[r.user] >= min_reviews]
    return out


# ---------------------------------------------------------------------------
# context encoding


@dataclass
class ContextEncoder:
    """One-hot (with OOV bucket) for ``c.*`` columns, min-max for ``d.*``."""

    columns: list
    vocab: dict
    ranges: dict

    @classmethod
    def fit(cls, rows, exclude=()):
        exclude = set(exclude)
        columns = [c for c in context_columns(rows) if c not in exclude]
        vocab = {}
        ranges = {}
        for c in columns:
            if c.startswith("c."):
                vocab[c] = sorted({str(r.context.get(c, "")) for r in rows} - {""})
            else:
                vals = [r.context[c] for r in rows if c in r.context]
                ranges[c] = (float(min(vals)), float(max(vals))) if vals else (0.0, 0.0)
        return cls(columns, vocab, ranges)

    def column_width(self, col):
        return len(self.vocab[col]) + 1 if col.startswith("c.") else 1

    @property
    def width(self):
        return sum(self.column_width(c) for c in self.columns)

    def slices(self):
        out = {}
        start = 0
        for c in self.columns:
            w = self.column_width(c)
            out[c] = slice(start, start + w)
            start += w
        return out

    def normalize(self, col, value):
        lo, hi = self.ranges[col]
        if hi <= lo:
            return 0.0
        return min(max((value - lo) / (hi - lo), 0.0), 1.0)

    def transform(self, rows):
        S = np.zeros((len(rows), self.width))
        lookup = {c: {v: i + 1 for i, v in enumerate(self.vocab[c])} for c in self.vocab}
        for col, sl in self.slices().items():
            if col.startswith("c."):
                table = lookup[col]
                for n, r in enumerate(rows):
                    S[n, sl.start + table.get(str(r.context.get(col, "")), 0)] = 1.0
            else:
                for n, r in enumerate(rows):
                    if col in r.context:
                        S[n, sl.start] = self.normalize(col, r.context[col])
        return S

    def to_dict(self):
        return {
            "columns": list(self.columns),
            "vocab": {c: list(v) for c, v in self.vocab.items()},
            "ranges": {c: list(v) for c, v in self.ranges.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            list(d["columns"]),
            {c: list(v) for c, v in d["vocab"].items()},
            {c: tuple(v) for c, v in d["ranges"].items()},
        )


def parse_groups(groups):
    """``"c.time,c.weekday"`` -> ``["c.time", "c.weekday"]``."""
    if isinstance(groups, str):
        return [g.strip() for g in groups.split(",") if g.strip()]
    return list(groups)


# ---------------------------------------------------------------------------
# splitting


def _by_user(rows):
    groups = defaultdict(list)
    for r in rows:
        groups[r.user].append(r)
    return groups


def split_dataset(rows, strategy="ratio", fraction=0.8, seed=0, cutoff=None,
                  train_window=None, test_window=None):
    """Split interactions into ``(train, test)``.

    ``ratio`` shuffles each user's distinct items and sends the first
    ``round(fraction * n)`` to train; ``leave_one_out`` holds out one random
    positive item per user; ``time`` uses ``cutoff`` with optional window
    lengths in timestamp units. Rows for one (user, item) pair never straddle
    the split.
    """
    if strategy not in SPLIT_STRATEGIES:
        raise ConfigError(f"split strategy must be one of {SPLIT_STRATEGIES}", field="split.strategy")
    if strategy == "time":
        return _split_by_time(rows, cutoff, train_window, test_window)
    if strategy == "ratio" and not 0.0 < fraction < 1.0:
        raise ConfigError("split fraction must lie in (0, 1)", field="split.fraction")

    rng = _rng(seed)
    train, test = [], []
    groups = _by_user(rows)
    for user in sorted(groups):
        urows = groups[user]
        by_item = defaultdict(list)
        for r in urows:
            by_item[r.item].append(r)
        items = list(by_item)
        if strategy == "ratio":
            order = rng.permutation(len(items))
            n_train = int(round(fraction * len(items)))
            train_items = {items[i] for i in order[:n_train]}
            for r in urows:
                (train if r.item in train_items else test).append(r)
        else:
            pos_items = [i for i in items if any(r.label == 1 for r in by_item[i])]
            if not pos_items:
                raise DataError(f"user {user} has no positive interaction for leave-one-out",
                                field=f"user:{user}")
            held = pos_items[rng.integers(len(pos_items))]
            held_rows = [r for r in by_item[held] if r.label == 1]
            test.append(held_rows[rng.integers(len(held_rows))])
            train.extend(r for r in urows if r.item != held)
    return train, test


def _split_by_time(rows, cutoff, train_window=None, test_window=None):
    if cutoff is None:
        raise ConfigError("time split requires a cutoff", field="split.cutoff")
    if any(r.timestamp is None for r in rows):
        raise DataError("time split requires a timestamp on every row")
    lo = -math.inf if train_window is None else cutoff - train_window
    hi = math.inf if test_window is None else cutoff + test_window
    train = [r for r in rows if lo <= r.timestamp < cutoff]
    test = [r for r in rows if cutoff <= r.timestamp < hi]
    return train, test


# ---------------------------------------------------------------------------
# negative sampling


def interaction_index(rows):
    """user -> set of items the user interacted with (any label)."""
    index = defaultdict(set)
    for r in rows:
        index[r.user].add(r.item)
    return dict(index)


def positive_index(rows):
    index = defaultdict(set)
    for r in rows:
        if r.label == 1:
            index[r.user].add(r.item)
    return dict(index)


def negative_sample(user, catalog, positives, ns, seed=0):
    """``ns`` distinct catalog items outside ``positives[user]``, drawn uniformly."""
    if ns < 0:
        raise ConfigError("negative sample count must be >= 0", field="negatives")
    if ns == 0:
        return []
    rng = _rng(seed)
    excluded = positives.get(user, set()) if isinstance(positives, dict) else set(positives)
    catalog = np.asarray(catalog)
    candidates = catalog[~np.isin(catalog, np.fromiter(excluded, dtype=catalog.dtype, count=len(excluded)))]
    if candidates.size < ns:
        raise SamplingError(
            f"user {user}: only {candidates.size} non-positive items, {ns} requested"
        )
    return [int(i) for i in rng.choice(candidates, size=ns, replace=False)]


def add_training_negatives(rows, catalog, exclude, rate, seed=0):
    """For each positive row, ``rate`` sampled negatives sharing its context."""
    if rate <= 0:
        return []
    rng = _rng(seed)
    out = []
    for r in rows:
        if r.label != 1:
            continue
        for item in negative_sample(r.user, catalog, exclude, rate, rng):
            out.append(replace(r, item=item, rating=math.nan, label=0, row_id=-1))
    return out


# ---------------------------------------------------------------------------
# assembled dataset


@dataclass
class Dataset:
    train: list
    test: list
    encoder: ContextEncoder
    catalog: np.ndarray
    positives: dict
    n_users: int
    n_items: int
    seed: int = 0
    split: dict = field(default_factory=dict)

    @property
    def pretrain(self):
        return [r for r in self.train if r.label == 1]

    def side(self, rows):
        return self.encoder.transform(rows)

    def manifest(self):
        membership = {
            "train": [r.row_id for r in self.train],
            "test": [r.row_id for r in self.test],
        }
        digest = hashlib.sha256(json.dumps(membership, sort_keys=True).encode()).hexdigest()
        return {
            "seed": self.seed,
            "split": self.split,
            "counts": {
                "train": len(self.train),
                "test": len(self.test),
                "pretrain": len(self.pretrain),
                "users": self.n_users,
                "items": self.n_items,
            },
            "encoder": self.encoder.to_dict(),
            "membership": membership,
            "digest": digest,
        }


def build_dataset(rows, split=None, seed=0, exclude_columns=()):
    """Split labeled rows and fit the context encoder on all of them."""
    split = dict(split or {"strategy": "ratio", "fraction": 0.8})
    if not rows:
        raise DataError("no interactions left after filtering")
    if any(r.label is None for r in rows):
        raise DataError("rows must be labeled before splitting; run convert_implicit")
    params = {k: v for k, v in split.items() if k != "strategy"}
    train, test = split_dataset(rows, split.get("strategy", "ratio"), seed=seed, **params)
    encoder = ContextEncoder.fit(rows, exclude=exclude_columns)
    catalog = np.array(sorted({r.item for r in rows}), dtype=np.int64)
    return Dataset(
        train=train,
        test=test,
        encoder=encoder,
        catalog=catalog,
        positives=positive_index(rows),
        n_users=max(r.user for r in rows) + 1,
        n_items=max(r.item for r in rows) + 1,
        seed=seed,
        split=split,
    )


def build_pretrain_set(train, features, encoder):
    """Assembled inputs for the positive rows of ``train`` (pre-training data)."""
    rows = [r for r in train if r.label == 1]
    if not rows:
        warnings.warn("pre-training set is empty: the train split has no positives", stacklevel=2)
        return rows, np.zeros((0, features.input_dim))
    users = np.array([r.user for r in rows])
    items = np.array([r.item for r in rows])
    return rows, features.build(users, items, encoder.transform(rows))
