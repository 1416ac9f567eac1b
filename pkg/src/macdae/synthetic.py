"""Synthetic interaction logs with planted structure, for tests and demos."""

import numpy as np

from .data import Interaction

TIME_SLOTS = ("morning", "noon", "afternoon", "evening")


def planted_regime_rows(n_users=80, n_items=60, n_rows=3000, n_regimes=4, context_noise=0.3,
                        p_match=0.85, p_miss=0.05, noise_column=False, seed=0):
    """Impression log whose click label depends on a hidden per-row regime.

    Each row draws a regime from its user's mixture; the explicit context
    (time slot, weekday, distance) is a noisy view of the regime, and the
    shown item is clicked with high probability only when its category
    matches the regime. The regime itself is never written out.
    """
    if n_regimes > len(TIME_SLOTS):
        raise ValueError(f"at most {len(TIME_SLOTS)} regimes are supported")
    rng = np.random.default_rng(seed)
    item_regime = rng.permutation(np.arange(n_items) % n_regimes)
    user_mix = rng.dirichlet(np.full(n_regimes, 0.7), size=n_users)
    rows = []
    for n in range(n_rows):
        u = int(rng.integers(n_users))
        r = int(rng.choice(n_regimes, p=user_mix[u]))
        slot = r if rng.random() >= context_noise else int(rng.integers(n_regimes))
        weekend = rng.random() < (0.2 + 0.6 * (r % 2))
        dist = float(rng.beta(2 + 3 * (r >= n_regimes // 2), 2 + 3 * (r < n_regimes // 2)))
        item = int(rng.integers(n_items))
        p = p_match if item_regime[item] == r else p_miss
        ctx = {
            "c.time": TIME_SLOTS[slot],
            "c.weekday": "weekend" if weekend else "weekday",
            "d.dist": dist,
        }
        if noise_column:
            ctx["d.noise"] = float(rng.random())
        rows.append(Interaction(u, item, label=int(rng.random() < p), timestamp=float(n),
                                context=ctx, row_id=n))
    return rows


def single_signal_rows(n_users=40, n_items=40, n_rows=2000, seed=0):
    """Rows whose label is fixed by ``d.signal`` alone; the other columns are noise."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in range(n_rows):
        signal = float(rng.random())
        ctx = {
            "d.signal": signal,
            "d.noise": float(rng.random()),
            "c.color": str(rng.choice(["red", "green", "blue"])),
        }
        rows.append(Interaction(int(rng.integers(n_users)), int(rng.integers(n_items)),
                                label=int(signal > 0.5), context=ctx, row_id=n))
    return rows
