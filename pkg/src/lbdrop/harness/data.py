"""Synthetic datasets and interaction-file ingestion."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import ConfigError

log = logging.getLogger(__name__)


def generate_toy_dataset(n: int, rng: np.random.Generator, true_slope: float = 1.0, noise_sd: float = 0.1):
    """Linear regression data: ``x ~ U[-1, 1]``, ``y = slope * x + N(0, noise_sd^2)``."""
    if n < 1:
        raise ConfigError("toy dataset needs at least one sample")
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    y = true_slope * x + noise_sd * rng.standard_normal((n, 1))
    return x, y


def two_moons(n: int, rng: np.random.Generator, noise: float = 0.1):
    """Two interleaved half circles; labels 0/1 in equal proportion (up to one)."""
    if n < 2:
        raise ConfigError("two-moons needs at least two samples")
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0, np.pi, n0)
    t1 = rng.uniform(0, np.pi, n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    return x[order], y[order]


def synthetic_interactions(
    n_users: int,
    n_items: int,
    rng: np.random.Generator,
    n_factors: int = 5,
    mean_interactions: float = 15.0,
    popularity_weight: float = 0.3,
    factor_shape: float = 0.1,
    user_concentration: float = 0.1,
):
    """Binary user-item matrix with low-rank taste structure plus item popularity.

    Each user belongs to a mixture of ``n_factors`` taste groups (Dirichlet
    with ``user_concentration``); each group prefers a sparse random subset of
    items (gamma weights with shape ``factor_shape``).  Per-user interaction counts are drawn
    around ``mean_interactions`` and items sampled without replacement from
    the user's preference distribution.
    """
    if n_users < 1 or n_items < 2:
        raise ConfigError("need at least one user and two items")
    item_factors = rng.gamma(factor_shape, 1.0, size=(n_factors, n_items))
    popularity = rng.gamma(1.0, 1.0, size=n_items)
    popularity /= popularity.sum()
    user_mix = rng.dirichlet(np.full(n_factors, user_concentration), size=n_users)
    taste = user_mix @ (item_factors / item_factors.sum(axis=1, keepdims=True))
    prefs = (1 - popularity_weight) * taste + popularity_weight * popularity
    x = np.zeros((n_users, n_items))
    counts = np.clip(rng.poisson(mean_interactions, n_users), 2, n_items - 1)
    for u in range(n_users):
        p = prefs[u] / prefs[u].sum()
        x[u, rng.choice(n_items, size=counts[u], replace=False, p=p)] = 1.0
    return x


def read_interactions(path) -> tuple[np.ndarray, dict, dict]:
    """Read ``user_id<TAB>item_id`` lines into a binary matrix with dense id maps."""
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    pairs = []
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ConfigError(f"{path}:{lineno}: expected 'user<TAB>item'")
            u = users.setdefault(parts[0], len(users))
            i = items.setdefault(parts[1], len(items))
            pairs.append((u, i))
    x = np.zeros((len(users), len(items)))
    if pairs:
        idx = np.array(pairs)
        x[idx[:, 0], idx[:, 1]] = 1.0
    return x, users, items


def split_users(n_users: int, n_heldout: int, rng: np.random.Generator):
    if not 0 < n_heldout < n_users:
        raise ConfigError("held-out user count must be between 1 and n_users - 1")
    order = rng.permutation(n_users)
    return np.sort(order[n_heldout:]), np.sort(order[:n_heldout])


def fold_in_split(x: np.ndarray, rng: np.random.Generator, holdout_frac: float = 0.2):
    """Per user, hide ``holdout_frac`` of the interactions (at least one).

    Users with fewer than two interactions cannot be split; they are dropped
    with a warning.  Returns ``(fold_in, held_out, kept_user_index)``.
    """
    counts = x.sum(axis=1)
    keep = np.flatnonzero(counts >= 2)
    if len(keep) < len(x):
        log.warning("excluding %d evaluation users with fewer than 2 interactions", len(x) - len(keep))
    fold, held = np.zeros((len(keep), x.shape[1])), np.zeros((len(keep), x.shape[1]))
    for r, u in enumerate(keep):
        items = np.flatnonzero(x[u] > 0)
        n_hold = min(len(items) - 1, max(1, int(round(holdout_frac * len(items)))))
        hidden = rng.choice(items, size=n_hold, replace=False)
        fold[r, items] = 1.0
        fold[r, hidden] = 0.0
        held[r, hidden] = 1.0
    return fold, held, keep
