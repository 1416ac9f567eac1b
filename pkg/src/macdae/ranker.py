"""Wide&Deep scorer over (user, item, explicit context, implicit context).

``score = sigmoid(wide(x) + deep(concat(x, g(x))))`` where ``x`` is the
assembled input, ``wide`` is linear in ``x`` and ``deep`` is a ReLU MLP
ending in a linear output unit. ``g`` is the representation extracted by an
attached pre-trained model; it is frozen in ``feature_based`` mode and
updated jointly in ``fine_tune`` mode.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NumericError
from .features import FeatureSpace
from .numerics import AdamState, adam_step, glorot_uniform, he_uniform, relu, sigmoid
from .pretrain import PretrainModel, _encode, _encode_backward

log = logging.getLogger(__name__)

INTEGRATION_MODES = ("none", "feature_based", "fine_tune")
_P_MIN = np.finfo(np.float64).tiny
_P_MAX = 1.0 - np.finfo(np.float64).epsneg


@dataclass(frozen=True)
class RankerConfig:
    hidden_sizes: tuple = (256,)
    integration: str = "none"
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    train_embeddings: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h <= 0 for h in self.hidden_sizes):
            raise ConfigError("hidden sizes must be positive", field="hidden_sizes")
        if self.integration not in INTEGRATION_MODES:
            raise ConfigError(f"integration must be one of {INTEGRATION_MODES}", field="integration")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", field="epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", field="batch_size")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive", field="learning_rate")


@dataclass
class RankerBatch:
    users: np.ndarray
    items: np.ndarray
    side: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.side = np.asarray(self.side, dtype=np.float64).reshape(len(self.users), -1)

    def __len__(self):
        return len(self.users)

    def take(self, idx):
        return RankerBatch(self.users[idx], self.items[idx], self.side[idx])


@dataclass
class RankerModel:
    config: RankerConfig
    params: dict
    features: FeatureSpace
    pretrained: PretrainModel = None
    meta: dict = field(default_factory=dict)

    @property
    def n_layers(self):
        return len(self.config.hidden_sizes)

    @property
    def rep_dim(self):
        return 0 if self.pretrained is None else self.pretrained.config.hidden_dim

    def copy(self):
        pre = None if self.pretrained is None else self.pretrained.copy()
        return RankerModel(self.config, {k: v.copy() for k, v in self.params.items()},
                           self.features.copy(), pre, dict(self.meta))


def init_ranker(config, features, pretrained=None):
    """Fresh ranker; the pre-trained model (if any) is copied, never shared."""
    if (config.integration == "none") != (pretrained is None):
        raise ConfigError(
            "a pre-trained model is required iff integration is not 'none'", field="integration"
        )
    d_x = features.input_dim
    if pretrained is not None and pretrained.config.input_dim != d_x:
        raise DimensionError(
            f"pre-trained input_dim {pretrained.config.input_dim} != feature width {d_x}"
        )
    rng = np.random.default_rng([config.seed, 0])
    d_in = d_x + (0 if pretrained is None else pretrained.config.hidden_dim)
    params = {"wide.w": np.zeros(d_x), "wide.b": np.zeros(1)}
    for i, h in enumerate(config.hidden_sizes):
        params[f"deep.W{i}"] = he_uniform(rng, h, d_in)
        params[f"deep.b{i}"] = np.zeros(h)
        d_in = h
    params["out.w"] = glorot_uniform(rng, 1, d_in)[0]
    params["out.b"] = np.zeros(1)
    model = RankerModel(config, params, features, None if pretrained is None else pretrained.copy())
    return model.copy()


# ---------------------------------------------------------------------------
# forward / backward


def _deep_forward(params, n_layers, D):
    acts = [D]
    pres = []
    a = D
    for i in range(n_layers):
        z = a @ params[f"deep.W{i}"].T + params[f"deep.b{i}"]
        pres.append(z)
        a = relu(z)
        acts.append(a)
    return a @ params["out.w"] + params["out.b"][0], acts, pres


def _logits(params, n_layers, X, R=None):
    D = X if R is None else np.concatenate([X, R], axis=1)
    deep, acts, pres = _deep_forward(params, n_layers, D)
    wide = X @ params["wide.w"] + params["wide.b"][0]
    return wide + deep, {"X": X, "acts": acts, "pres": pres}


def wide_deep_score(model, x, representation=None):
    """Click probability for assembled input(s) ``x``, strictly inside (0, 1)."""
    values = getattr(x, "values", x)
    X = np.atleast_2d(np.asarray(values, dtype=np.float64))
    single = np.ndim(values) == 1
    if X.shape[1] != model.features.input_dim:
        raise DimensionError(f"input width {X.shape[1]} != {model.features.input_dim}")
    R = None
    if model.config.integration != "none":
        if representation is None:
            raise DimensionError("this ranker needs an implicit-context representation")
        R = np.atleast_2d(getattr(representation, "values", representation))
        if R.shape != (X.shape[0], model.rep_dim):
            raise DimensionError(f"representation shape {R.shape} != {(X.shape[0], model.rep_dim)}")
    elif representation is not None:
        raise DimensionError("this ranker has no representation input")
    z, _ = _logits(model.params, model.n_layers, X, R)
    p = np.clip(sigmoid(z), _P_MIN, _P_MAX)
    return float(p[0]) if single else p


def _forward(model, batch):
    X = model.features.build(batch.users, batch.items, batch.side)
    R = enc_cache = None
    if model.pretrained is not None:
        enc_cache = _encode(model.pretrained, X, X)
        R = enc_cache["h"]
    z, cache = _logits(model.params, model.n_layers, X, R)
    cache["enc"] = enc_cache
    return z, cache


def predict(model, batch):
    z, _ = _forward(model, batch)
    return np.clip(sigmoid(z), _P_MIN, _P_MAX)


def bce_from_logits(z, y):
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def trainable_params(model):
    """Name -> array views of everything ranker_fit updates."""
    out = {f"rk.{k}": v for k, v in model.params.items()}
    if model.config.train_embeddings:
        out["emb.user"] = model.features.users.weights
        out["emb.item"] = model.features.items.weights
    if model.config.integration == "fine_tune":
        out.update({f"pre.{k}": v for k, v in model.pretrained.params.items()
                    if k in _used_pretrain_params(model.pretrained)})
    return out


def _used_pretrain_params(pre):
    if pre.kind == "vae":
        return ("mu.W", "mu.b")
    if pre.kind == "macdae":
        return ("enc.W", "enc.b", "att.W")
    return ("enc.W", "enc.b")


def ranker_loss_and_grad(model, batch, labels, need_grad=True):
    """Mean binary cross-entropy and gradients keyed like :func:`trainable_params`."""
    y = np.asarray(labels, dtype=np.float64)
    z, cache = _forward(model, batch)
    loss = bce_from_logits(z, y)
    if not need_grad:
        return loss, None
    p = model.params
    N = len(y)
    dz = (sigmoid(z) - y) / N
    X = cache["X"]
    d_x = X.shape[1]
    grads = {"rk.wide.w": X.T @ dz, "rk.wide.b": np.array([dz.sum()])}
    acts, pres = cache["acts"], cache["pres"]
    grads["rk.out.w"] = acts[-1].T @ dz
    grads["rk.out.b"] = np.array([dz.sum()])
    da = np.outer(dz, p["out.w"])
    for i in reversed(range(model.n_layers)):
        dpre = da * (pres[i] > 0)
        grads[f"rk.deep.W{i}"] = dpre.T @ acts[i]
        grads[f"rk.deep.b{i}"] = dpre.sum(axis=0)
        da = dpre @ p[f"deep.W{i}"]
    dX = da[:, :d_x] + np.outer(dz, p["wide.w"])

    if model.pretrained is not None:
        dR = da[:, d_x:]
        pre_grads, dX_rep = _encode_backward(
            model.pretrained, cache["enc"], dR, want_input=model.config.train_embeddings
        )
        if model.config.integration == "fine_tune":
            grads.update({f"pre.{k}": pre_grads[k] for k in _used_pretrain_params(model.pretrained)})
        if dX_rep is not None:
            dX = dX + dX_rep

    if model.config.train_embeddings:
        lay = model.features.layout
        Eu = X[:, lay.user.offset:lay.user.stop]
        Ei = X[:, lay.item.offset:lay.item.stop]
        dInt = dX[:, lay.interaction.offset:lay.interaction.stop]
        dEu = dX[:, lay.user.offset:lay.user.stop] + dInt * Ei
        dEi = dX[:, lay.item.offset:lay.item.stop] + dInt * Eu
        gU = np.zeros_like(model.features.users.weights)
        gI = np.zeros_like(model.features.items.weights)
        np.add.at(gU, batch.users, dEu)
        np.add.at(gI, batch.items, dEi)
        grads["emb.user"] = gU
        grads["emb.item"] = gI
    return loss, grads


def ranker_fit(model, batch, labels, log_every=0):
    """Adam on binary cross-entropy. Returns ``(trained copy, per-epoch mean loss)``."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (len(batch),):
        raise DimensionError("one label per example is required")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    if len(batch) == 0:
        raise DataError("training set is empty")
    model = model.copy()
    cfg = model.config
    params = trainable_params(model)
    state = AdamState(learning_rate=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(batch)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = ranker_loss_and_grad(model, batch.take(idx), y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite ranker loss at epoch {epoch}")
            adam_step(params, grads, state)
            total += loss * len(idx)
        trace.append(total / n)
        if log_every and epoch % log_every == 0:
            log.info("ranker epoch %d loss %.6f", epoch, trace[-1])
    return model, trace
