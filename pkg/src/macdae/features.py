"""Embedding tables and assembly of the pre-training input vector.

The input for one interaction is ``concat(e_u, e_i, e_u * e_i, e_side)``:
user embedding, item embedding, their element-wise product, then side
features (one-hot context columns and normalized dense columns).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, UnknownEntityError

OOV_POLICIES = ("strict", "fallback")
INIT_SCALE = 0.05


@dataclass
class EmbeddingTable:
    kind: str
    weights: np.ndarray
    oov: str = "strict"
    fallback: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("user", "item"):
            raise ValueError(f"unknown entity kind {self.kind!r}")
        if self.oov not in OOV_POLICIES:
            raise ValueError(f"unknown OOV policy {self.oov!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise DimensionError("embedding weights must be (vocab, dim)")
        if self.fallback is None:
            self.fallback = np.zeros(self.dim)
        self.fallback = np.asarray(self.fallback, dtype=np.float64)
        if self.fallback.shape != (self.dim,):
            raise DimensionError("fallback row must have `dim` entries")

    @classmethod
    def random(cls, kind, vocab_size, dim, rng, oov="strict"):
        w = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(vocab_size, dim))
        return cls(kind, w, oov=oov)

    @property
    def vocab_size(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    def copy(self):
        return EmbeddingTable(self.kind, self.weights.copy(), self.oov, self.fallback.copy())

    def lookup(self, ids):
        """Rows for an id or an array of ids."""
        ids = np.asarray(ids)
        oov = (ids < 0) | (ids >= self.vocab_size)
        if np.any(oov):
            if self.oov == "strict":
                bad = ids[oov].ravel()[0] if ids.ndim else ids
                raise UnknownEntityError(f"unknown {self.kind} id {int(bad)}")
            safe = np.where(oov, 0, ids)
            out = self.weights[safe].copy()
            out[oov] = self.fallback
            return out
        return self.weights[ids].copy()


def lookup_embedding(table, entity_id):
    return table.lookup(entity_id)


@dataclass(frozen=True)
class Segment:
    offset: int
    length: int

    @property
    def stop(self):
        return self.offset + self.length


@dataclass(frozen=True)
class InputLayout:
    user: Segment
    item: Segment
    interaction: Segment
    side: Segment

    @classmethod
    def build(cls, embed_dim, side_dim):
        d = embed_dim
        return cls(Segment(0, d), Segment(d, d), Segment(2 * d, d), Segment(3 * d, side_dim))

    @property
    def size(self):
        return self.side.stop


@dataclass(frozen=True)
class InputVector:
    values: np.ndarray
    layout: InputLayout


def assemble_input(e_u, e_i, e_side=()):
    """Build one input vector from user/item embeddings and side features."""
    e_u = np.asarray(e_u, dtype=np.float64).ravel()
    e_i = np.asarray(e_i, dtype=np.float64).ravel()
    e_side = np.asarray(e_side, dtype=np.float64).ravel()
    if e_u.size != e_i.size:
        raise DimensionError(f"user/item embedding sizes differ: {e_u.size} vs {e_i.size}")
    values = np.concatenate([e_u, e_i, e_u * e_i, e_side])
    if not np.all(np.isfinite(values)):
        raise NumericError("input features must be finite")
    return InputVector(values, InputLayout.build(e_u.size, e_side.size))


def assemble_batch(e_u, e_i, e_side):
    """Row-wise :func:`assemble_input` over (N, d), (N, d), (N, s) arrays."""
    e_u = np.atleast_2d(e_u)
    e_i = np.atleast_2d(e_i)
    e_side = np.asarray(e_side, dtype=np.float64).reshape(e_u.shape[0], -1)
    if e_u.shape != e_i.shape:
        raise DimensionError(f"user/item embedding shapes differ: {e_u.shape} vs {e_i.shape}")
    return np.concatenate([e_u, e_i, e_u * e_i, e_side], axis=1)


@dataclass
class FeatureSpace:
    """User and item tables used to turn (user, item, side) rows into inputs."""

    users: EmbeddingTable
    items: EmbeddingTable
    side_dim: int = 0

    def __post_init__(self):
        if self.users.dim != self.items.dim:
            raise DimensionError("user and item embeddings must share a dimension")

    @classmethod
    def random(cls, n_users, n_items, dim, side_dim, seed):
        rng = np.random.default_rng(seed)
        users = EmbeddingTable.random("user", n_users, dim, rng)
        items = EmbeddingTable.random("item", n_items, dim, rng)
        return cls(users, items, side_dim)

    def copy(self):
        return FeatureSpace(self.users.copy(), self.items.copy(), self.side_dim)

    @property
    def embed_dim(self):
        return self.users.dim

    @property
    def layout(self):
        return InputLayout.build(self.embed_dim, self.side_dim)

    @property
    def input_dim(self):
        return 3 * self.embed_dim + self.side_dim

    def build(self, users, items, side):
        side = np.asarray(side, dtype=np.float64).reshape(len(users), -1)
        if side.shape[1] != self.side_dim:
            raise DimensionError(f"side features have width {side.shape[1]}, expected {self.side_dim}")
        return assemble_batch(self.users.lookup(users), self.items.lookup(items), side)
