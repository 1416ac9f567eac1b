"""Multi-head DAE, multi-head VAE and MACDAE with hand-derived gradients.

All three share a sigmoid decoder ``x' = sigmoid(W' h + b')`` and the
batch-mean squared reconstruction loss. Parameters live in a flat dict:

* ``enc.W`` (d_h, d_m), ``enc.b`` (d_h,): head k owns rows ``k*d_k:(k+1)*d_k``
  (DAE and MACDAE)
* ``att.W`` (d_k, d_m): attention query projection (MACDAE)
* ``mu.W``/``mu.b`` and ``logvar.W``/``logvar.b``: per-head diagonal
  Gaussian encoder, same row blocking as ``enc.*`` (VAE)
* ``dec.W`` (d_m, d_h), ``dec.b`` (d_m,)
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError, DimensionError, NumericError
from .numerics import AdamState, adam_step, glorot_uniform, sigmoid, softmax

log = logging.getLogger(__name__)

KINDS = ("dae", "vae", "macdae")
PENALTY_MODES = ("raw", "hinge")


@dataclass(frozen=True)
class PretrainConfig:
    kind: str = "macdae"
    heads: int = 4
    hidden_dim: int = 256
    input_dim: int = None
    keep_probability: float = 0.95
    penalty: float = 0.05
    epsilon: float = 0.75
    penalty_mode: str = "raw"
    epochs: int = 5
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}", field="kind")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1", field="heads")
        if self.hidden_dim < 1 or self.hidden_dim % self.heads:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} must be a positive multiple of heads {self.heads}",
                field="hidden_dim",
            )
        if self.input_dim is not None and self.input_dim < 1:
            raise ConfigError("input_dim must be positive", field="input_dim")
        if not 0.0 <= self.keep_probability <= 1.0:
            raise ConfigError("keep_probability must lie in [0, 1]", field="keep_probability")
        if self.penalty < 0:
            raise ConfigError("penalty must be >= 0", field="penalty")
        if not self.epsilon < 1.0:
            raise ConfigError("epsilon must be < 1", field="epsilon")
        if self.penalty_mode not in PENALTY_MODES:
            raise ConfigError(f"penalty_mode must be one of {PENALTY_MODES}", field="penalty_mode")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", field="epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", field="batch_size")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive", field="learning_rate")

    @property
    def head_dim(self):
        return self.hidden_dim // self.heads


@dataclass
class PretrainModel:
    config: PretrainConfig
    params: dict

    @property
    def kind(self):
        return self.config.kind

    def copy(self):
        return PretrainModel(self.config, {k: v.copy() for k, v in self.params.items()})


@dataclass
class Representation:
    """Implicit-context vector(s); ``values`` is (d_h,) or (N, d_h)."""

    values: np.ndarray
    kind: str
    head_weights: np.ndarray = None


@dataclass(frozen=True)
class PretrainLossReport:
    reconstruction: float
    kl: float = 0.0
    penalty: float = 0.0

    @property
    def total(self):
        return self.reconstruction + self.kl + self.penalty

    def as_row(self):
        return {
            "reconstruction": self.reconstruction,
            "kl": self.kl,
            "penalty": self.penalty,
            "total": self.total,
        }


def init_pretrain_model(config):
    """Glorot-uniform weights, zero biases, drawn from ``config.seed``.

    The attention matrix is drawn last so a K=1 MACDAE starts from exactly
    the same encoder/decoder as a K=1 DAE with the same seed.
    """
    if config.input_dim is None:
        raise ConfigError("input_dim must be known before initialization", field="input_dim")
    rng = np.random.default_rng([config.seed, 0])
    d_m, d_h, d_k = config.input_dim, config.hidden_dim, config.head_dim
    params = {}
    if config.kind == "vae":
        params["mu.W"] = glorot_uniform(rng, d_h, d_m)
        params["mu.b"] = np.zeros(d_h)
        params["logvar.W"] = glorot_uniform(rng, d_h, d_m)
        params["logvar.b"] = np.zeros(d_h)
    else:
        params["enc.W"] = glorot_uniform(rng, d_h, d_m)
        params["enc.b"] = np.zeros(d_h)
    params["dec.W"] = glorot_uniform(rng, d_m, d_h)
    params["dec.b"] = np.zeros(d_m)
    if config.kind == "macdae":
        params["att.W"] = glorot_uniform(rng, d_k, d_m)
    return PretrainModel(config, params)


def corrupt_mask(x, keep_probability, rng):
    """Zero each coordinate independently with probability ``1 - keep_probability``.

    Kept coordinates are not rescaled.
    """
    if not 0.0 <= keep_probability <= 1.0:
        raise ConfigError("keep_probability must lie in [0, 1]", field="keep_probability")
    x = np.asarray(x, dtype=np.float64)
    return x * (rng.random(x.shape) < keep_probability)


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or X.shape[1] != model.config.input_dim:
        raise DimensionError(
            f"input width {X.shape[-1]} does not match model input_dim {model.config.input_dim}"
        )
    return X, single


# ---------------------------------------------------------------------------
# building blocks


def _heads(W, b, X, K):
    """Sigmoid heads as an (N, K, d_k) array."""
    H = sigmoid(X @ W.T + b)
    return H.reshape(X.shape[0], K, -1)


def _head_cosines(H):
    """(N, K, K) cosine matrices plus the (N, K) head norms."""
    norms = np.linalg.norm(H, axis=2)
    if np.any(norms == 0.0):
        raise DegenerateInputError("a head has zero norm; cosine penalty undefined")
    U = H / norms[:, :, None]
    return np.einsum("nid,njd->nij", U, U), U, norms


def _pair_mask(K):
    return np.triu(np.ones((K, K), dtype=bool), k=1)


def _penalty_and_grad(H, lam, eps, mode):
    """Batch-mean similarity penalty over unordered head pairs and its gradient."""
    N, K, _ = H.shape
    if K == 1:
        return 0.0, np.zeros_like(H)
    C, U, norms = _head_cosines(H)
    if lam == 0.0:
        return 0.0, np.zeros_like(H)
    upper = _pair_mask(K)
    excess = C - eps
    if mode == "raw":
        terms = lam * excess
        coef = np.full_like(C, lam)
    else:
        terms = lam * np.maximum(excess, 0.0)
        coef = lam * (excess > 0.0)
    value = float(terms[:, upper].sum() / N)
    # symmetric pair coefficients; d cos_ij / d h_i = (u_j - cos_ij u_i) / |h_i|
    A = np.where(upper, coef, 0.0)
    A = (A + np.swapaxes(A, 1, 2)) / N
    AU = np.einsum("nij,njd->nid", A, U)
    AC = (A * C).sum(axis=2)
    dH = (AU - AC[:, :, None] * U) / norms[:, :, None]
    return value, dH


def similarity_penalty(heads, lam, eps, mode="raw"):
    """Sum over head pairs i < j of ``lam * (cos(h_i, h_j) - eps)``.

    ``mode="hinge"`` clips each pair term at zero.
    """
    if mode not in PENALTY_MODES:
        raise ConfigError(f"penalty_mode must be one of {PENALTY_MODES}", field="penalty_mode")
    H = np.asarray(heads, dtype=np.float64)
    if H.ndim != 2:
        raise DimensionError("heads must be a (K, d_k) array")
    if H.shape[0] == 1:
        return 0.0
    value, _ = _penalty_and_grad(H[None], lam, eps, mode)
    return value


def attention_weights(model, x, heads):
    """Softmax over ``Q . h_k`` with query ``Q = W_a x`` from the clean input."""
    if model.kind != "macdae":
        raise ConfigError("attention weights exist only for MACDAE", field="kind")
    X, single = _check_input(model, x)
    H = np.asarray(heads, dtype=np.float64)
    if single:
        H = H[None]
    cfg = model.config
    if H.shape[1:] != (cfg.heads, cfg.head_dim) or H.shape[0] != X.shape[0]:
        raise DimensionError(f"heads must have shape (K={cfg.heads}, d_k={cfg.head_dim})")
    Q = X @ model.params["att.W"].T
    mu = softmax(np.einsum("nkd,nd->nk", H, Q), axis=1)
    return mu[0] if single else mu


# ---------------------------------------------------------------------------
# encoders: forward with cache, backward to params and inputs


def _encode(model, X_clean, X_in):
    """Deterministic encoder pass used for DAE/MACDAE training and all extraction."""
    cfg = model.config
    p = model.params
    K = cfg.heads
    cache = {"X_clean": X_clean, "X_in": X_in}
    if model.kind == "vae":
        M = X_in @ p["mu.W"].T + p["mu.b"]
        cache["M"] = M
        cache["h"] = M
        return cache
    H = _heads(p["enc.W"], p["enc.b"], X_in, K)
    cache["H"] = H
    if model.kind == "macdae":
        Q = X_clean @ p["att.W"].T
        mu = softmax(np.einsum("nkd,nd->nk", H, Q), axis=1)
        cache["Q"] = Q
        cache["mu"] = mu
        cache["h"] = (H * mu[:, :, None]).reshape(X_in.shape[0], -1)
    else:
        cache["h"] = H.reshape(X_in.shape[0], -1)
    return cache


def _encode_backward(model, cache, dh, dH_extra=None, want_input=False):
    """Gradients of the encoder given dL/dh (and extra dL/dH on the raw heads).

    Returns ``(grads, dX)`` where ``dX`` is the gradient w.r.t. the encoder
    input (clean and corrupted paths summed) or ``None``.
    """
    p = model.params
    K = model.config.heads
    N = dh.shape[0]
    grads = {}
    dX = None
    if model.kind == "vae":
        grads["mu.W"] = dh.T @ cache["X_in"]
        grads["mu.b"] = dh.sum(axis=0)
        if want_input:
            dX = dh @ p["mu.W"]
        return grads, dX

    H = cache["H"]
    dseg = dh.reshape(N, K, -1)
    if model.kind == "macdae":
        mu = cache["mu"]
        Q = cache["Q"]
        dH = mu[:, :, None] * dseg
        dmu = (dseg * H).sum(axis=2)
        dlogit = mu * (dmu - (mu * dmu).sum(axis=1, keepdims=True))
        dH = dH + dlogit[:, :, None] * Q[:, None, :]
        dQ = np.einsum("nk,nkd->nd", dlogit, H)
        grads["att.W"] = dQ.T @ cache["X_clean"]
    else:
        dH = dseg
    if dH_extra is not None:
        dH = dH + dH_extra
    dpre = (dH * H * (1.0 - H)).reshape(N, -1)
    grads["enc.W"] = dpre.T @ cache["X_in"]
    grads["enc.b"] = dpre.sum(axis=0)
    if want_input:
        dX = dpre @ p["enc.W"]
        if model.kind == "macdae":
            dX = dX + dQ @ p["att.W"]
    return grads, dX


def _decode(params, h):
    return sigmoid(h @ params["dec.W"].T + params["dec.b"])


def _reconstruction(X, Xr):
    return float(np.sum((X - Xr) ** 2) / X.shape[0])


def _decoder_backward(params, X, Xr, h):
    N = X.shape[0]
    dpre = (2.0 / N) * (Xr - X) * Xr * (1.0 - Xr)
    grads = {"dec.W": dpre.T @ h, "dec.b": dpre.sum(axis=0)}
    return grads, dpre @ params["dec.W"]


def kl_standard_normal(mean, logvar):
    """Closed-form KL(N(mean, diag(exp(logvar))) || N(0, I)), summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    # expm1 keeps exp(lv) - 1 - lv non-negative for tiny lv
    return 0.5 * np.sum(mean ** 2 + (np.expm1(logvar) - logvar), axis=-1)


def _vae_pass(model, X, noise, need_grad):
    p = model.params
    M = X @ p["mu.W"].T + p["mu.b"]
    LV = X @ p["logvar.W"].T + p["logvar.b"]
    if not np.all(np.isfinite(LV)):
        raise NumericError("VAE log-variance is not finite")
    S = np.exp(0.5 * LV)
    Z = M + S * noise
    Xr = _decode(p, Z)
    N = X.shape[0]
    report = PretrainLossReport(
        reconstruction=_reconstruction(X, Xr),
        kl=float(kl_standard_normal(M, LV).sum() / N),
    )
    out = {"M": M, "LV": LV, "Z": Z, "Xr": Xr}
    if not need_grad:
        return report, None, out
    grads, dZ = _decoder_backward(p, X, Xr, Z)
    dM = dZ + M / N
    dLV = dZ * noise * 0.5 * S + 0.5 * np.expm1(LV) / N
    grads["mu.W"] = dM.T @ X
    grads["mu.b"] = dM.sum(axis=0)
    grads["logvar.W"] = dLV.T @ X
    grads["logvar.b"] = dLV.sum(axis=0)
    return report, grads, out


def _ae_pass(model, X, X_tilde, need_grad):
    cfg = model.config
    cache = _encode(model, X, X_tilde)
    Xr = _decode(model.params, cache["h"])
    penalty, dH_pen = 0.0, None
    if model.kind == "macdae":
        penalty, dH_pen = _penalty_and_grad(cache["H"], cfg.penalty, cfg.epsilon, cfg.penalty_mode)
    report = PretrainLossReport(reconstruction=_reconstruction(X, Xr), penalty=penalty)
    out = {"cache": cache, "Xr": Xr}
    if not need_grad:
        return report, None, out
    grads, dh = _decoder_backward(model.params, X, Xr, cache["h"])
    enc_grads, _ = _encode_backward(model, cache, dh, dH_pen)
    grads.update(enc_grads)
    return report, grads, out


def pretrain_loss_and_grad(model, X, X_tilde=None, noise=None, need_grad=True):
    """Loss report and parameter gradients for one batch.

    DAE/MACDAE take the corrupted batch ``X_tilde`` (defaults to ``X``);
    the VAE takes standard-normal ``noise`` of shape (N, d_h).
    """
    X, _ = _check_input(model, X)
    if model.kind == "vae":
        if noise is None:
            raise ValueError("VAE loss needs reparameterization noise")
        noise = np.atleast_2d(noise)
        if noise.shape != (X.shape[0], model.config.hidden_dim):
            raise DimensionError("noise must have shape (N, hidden_dim)")
        report, grads, _ = _vae_pass(model, X, noise, need_grad)
    else:
        X_tilde = X if X_tilde is None else _check_input(model, X_tilde)[0]
        report, grads, _ = _ae_pass(model, X, X_tilde, need_grad)
    return report, grads


# ---------------------------------------------------------------------------
# public forward passes


def dae_forward(model, x, x_tilde):
    if model.kind != "dae":
        raise ConfigError("dae_forward needs a DAE model", field="kind")
    X, single = _check_input(model, x)
    Xt, _ = _check_input(model, x_tilde)
    report, _, out = _ae_pass(model, X, Xt, need_grad=False)
    h, Xr = out["cache"]["h"], out["Xr"]
    if single:
        h, Xr = h[0], Xr[0]
    return Representation(h, "dae"), Xr, report


def macdae_forward(model, x, x_tilde):
    if model.kind != "macdae":
        raise ConfigError("macdae_forward needs a MACDAE model", field="kind")
    X, single = _check_input(model, x)
    Xt, _ = _check_input(model, x_tilde)
    report, _, out = _ae_pass(model, X, Xt, need_grad=False)
    cache = out["cache"]
    h, mu, Xr = cache["h"], cache["mu"], out["Xr"]
    if single:
        h, mu, Xr = h[0], mu[0], Xr[0]
    return Representation(h, "macdae", head_weights=mu), Xr, report


def vae_forward(model, x, rng):
    """Sample ``z`` by reparameterization and return ``(z, x', report)``."""
    if model.kind != "vae":
        raise ConfigError("vae_forward needs a VAE model", field="kind")
    X, single = _check_input(model, x)
    noise = rng.standard_normal((X.shape[0], model.config.hidden_dim))
    report, _, out = _vae_pass(model, X, noise, need_grad=False)
    Z, Xr = out["Z"], out["Xr"]
    if single:
        Z, Xr = Z[0], Xr[0]
    return Z, Xr, report


def extract_representation(model, x):
    """Representation fed downstream: no masking, and the VAE mean instead of a sample."""
    X, single = _check_input(model, x)
    cache = _encode(model, X, X)
    h = cache["h"]
    mu = cache.get("mu")
    if single:
        h = h[0]
        mu = None if mu is None else mu[0]
    return Representation(h, model.kind, head_weights=mu)


def encode_heads(model, x):
    """Unweighted per-head states (N, K, d_k); VAE heads are the per-head means."""
    X, _ = _check_input(model, x)
    cache = _encode(model, X, X)
    if model.kind == "vae":
        return cache["M"].reshape(X.shape[0], model.config.heads, -1)
    return cache["H"]


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochTrace:
    epoch: int
    report: PretrainLossReport


def pretrain_fit(X, config, log_every=0):
    """Mini-batch Adam training. Returns ``(model, per-epoch trace)``.

    Shuffling, masking and VAE noise all come from one generator seeded by
    ``config.seed``, so two calls with the same inputs are bit-identical.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("pre-training set is empty")
    if config.input_dim is None:
        config = replace(config, input_dim=X.shape[1])
    model = init_pretrain_model(config)
    _check_input(model, X[:1])

    rng = np.random.default_rng([config.seed, 1])
    state = AdamState(learning_rate=config.learning_rate)
    n = X.shape[0]
    trace = []
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            Xb = X[order[start:start + config.batch_size]]
            # divergence is reported below as a NumericError, not as warnings
            with np.errstate(over="ignore", invalid="ignore"):
                if config.kind == "vae":
                    noise = rng.standard_normal((Xb.shape[0], config.hidden_dim))
                    report, grads = pretrain_loss_and_grad(model, Xb, noise=noise)
                else:
                    Xt = corrupt_mask(Xb, config.keep_probability, rng)
                    report, grads = pretrain_loss_and_grad(model, Xb, X_tilde=Xt)
            if not np.isfinite(report.total):
                raise NumericError(f"non-finite pre-training loss at epoch {epoch}")
            adam_step(model.params, grads, state)
            sums += Xb.shape[0] * np.array([report.reconstruction, report.kl, report.penalty])
        mean = sums / n
        trace.append(EpochTrace(epoch, PretrainLossReport(*mean)))
        if log_every and epoch % log_every == 0:
            log.info("pretrain epoch %d total %.6f", epoch, trace[-1].report.total)
    return model, trace
