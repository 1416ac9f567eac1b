"""Finite-difference checks shared by the unit and acceptance suites."""

import numpy as np

from macdae.features import FeatureSpace
from macdae.numerics import finite_diff_grad, relative_error
from macdae.pretrain import PretrainConfig, corrupt_mask, init_pretrain_model, pretrain_loss_and_grad
from macdae.ranker import RankerBatch, RankerConfig, init_ranker, ranker_loss_and_grad, trainable_params


def _param_errors(params, analytic, loss):
    errs = {}
    for name, arr in params.items():
        def f(x, arr=arr):
            saved = arr.copy()
            arr[...] = x
            try:
                return loss()
            finally:
                arr[...] = saved
        errs[name] = relative_error(analytic[name], finite_diff_grad(f, arr.copy()))
    return errs


def pretrain_case(kind, heads, seed, d_m=10, d_h=8, n=4, penalty=0.3, epsilon=0.2,
                  penalty_mode="raw"):
    """Random model and batch; returns the per-parameter relative errors."""
    rng = np.random.default_rng(seed)
    cfg = PretrainConfig(kind=kind, heads=heads, hidden_dim=d_h, input_dim=d_m, penalty=penalty,
                         epsilon=epsilon, penalty_mode=penalty_mode, seed=seed)
    model = init_pretrain_model(cfg)
    for k in model.params:
        if k.endswith(".b"):
            model.params[k] += rng.normal(scale=0.1, size=model.params[k].shape)
    X = rng.random((n, d_m))
    Xt = corrupt_mask(X, 0.8, rng)
    noise = rng.standard_normal((n, d_h)) if kind == "vae" else None
    _, grads = pretrain_loss_and_grad(model, X, Xt, noise)

    def loss():
        return pretrain_loss_and_grad(model, X, Xt, noise, need_grad=False)[0].total

    return _param_errors(model.params, grads, loss)


def ranker_case(integration, seed, kind="macdae", heads=2, hidden=(6, 4), n=5,
                n_users=4, n_items=5, dim=3, side_dim=2):
    rng = np.random.default_rng(seed)
    features = FeatureSpace.random(n_users, n_items, dim, side_dim, seed=seed)
    for table in (features.users, features.items):
        table.weights[...] = rng.normal(scale=0.5, size=table.weights.shape)
    pre = None
    if integration != "none":
        pre = init_pretrain_model(PretrainConfig(kind=kind, heads=heads, hidden_dim=2 * heads,
                                                 input_dim=features.input_dim, seed=seed))
    model = init_ranker(RankerConfig(hidden_sizes=hidden, integration=integration, seed=seed),
                        features, pre)
    for k in model.params:
        model.params[k] += rng.normal(scale=0.2, size=model.params[k].shape)
    batch = RankerBatch(rng.integers(n_users, size=n), rng.integers(n_items, size=n),
                        rng.random((n, side_dim)))
    y = rng.integers(0, 2, size=n).astype(float)
    _, grads = ranker_loss_and_grad(model, batch, y)
    params = trainable_params(model)
    assert set(grads) == set(params)
    return _param_errors(params, grads, lambda: ranker_loss_and_grad(model, batch, y, False)[0])
