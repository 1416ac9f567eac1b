"""Dense float64 arithmetic shared by the model modules.

Matrices are plain ``numpy.ndarray`` objects in float64; nothing here
allocates GPU memory or sparse structures.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DegenerateInputError, DimensionError, NumericError

DTYPE = np.float64


def as_matrix(values, rows=None, cols=None):
    """Return ``values`` as a finite float64 2-D array, checking the shape if given."""
    m = np.asarray(values, dtype=DTYPE)
    if m.ndim == 1 and rows is not None and cols is not None:
        if m.size != rows * cols:
            raise DimensionError(f"expected {rows * cols} values, got {m.size}")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got {m.ndim} dims")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise DimensionError(f"expected shape ({rows}, {cols}), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries")
    return m


def sigmoid(z):
    return expit(np.asarray(z, dtype=DTYPE))


def relu(z):
    return np.maximum(z, 0.0)


def softmax(logits, axis=-1):
    """Numerically stable softmax along ``axis``."""
    z = np.asarray(logits, dtype=DTYPE)
    if z.size == 0 or z.shape[axis] == 0:
        raise DimensionError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input has non-finite entries")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=DTYPE).ravel()
    b = np.asarray(b, dtype=DTYPE).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        # a dead head must not be silently treated as orthogonal
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass
class AdamState:
    """Per-parameter moment accumulators for :func:`adam_step`."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update to ``params`` in place.

    ``params`` and ``grads`` are dicts of arrays keyed by parameter name.
    Returns ``params`` for convenience.
    """
    if set(params) != set(grads):
        raise DimensionError(
            f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}"
        )
    for name in params:
        if np.shape(grads[name]) != np.shape(params[name]):
            raise DimensionError(
                f"gradient for {name!r} has shape {np.shape(grads[name])}, "
                f"parameter has {np.shape(params[name])}"
            )
        if name in state.m and state.m[name].shape != np.shape(params[name]):
            raise DimensionError(f"optimizer state for {name!r} has the wrong shape")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        p = params[name]
        g = np.asarray(grads[name], dtype=DTYPE)
        if name not in state.m:
            state.m[name] = np.zeros_like(p, dtype=DTYPE)
            state.v[name] = np.zeros_like(p, dtype=DTYPE)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params


def finite_diff_grad(f, x, step=1e-6):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """Norm-wise relative error; 0 when both gradients vanish."""
    a = np.asarray(analytic, dtype=DTYPE).ravel()
    n = np.asarray(numeric, dtype=DTYPE).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-10:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def he_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))
