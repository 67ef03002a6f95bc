"""Top-R ranking metrics for held-out implicit feedback."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RankingMetrics:
    recall_at_R: float
    ndcg_at_R: float
    R: int


def _top_r(scores: np.ndarray, r: int) -> np.ndarray:
    # stable ordering: ties broken by item index
    return np.argsort(-scores, axis=1, kind="stable")[:, :r]


def recall_at_r(scores, held_out, r: int) -> np.ndarray:
    """Hits in the top ``r`` divided by ``min(r, #held-out)`` per user."""
    scores = np.asarray(scores, dtype=np.float64)
    held = np.asarray(held_out) > 0
    top = _top_r(scores, r)
    hits = np.take_along_axis(held, top, axis=1).sum(axis=1)
    return hits / np.maximum(np.minimum(r, held.sum(axis=1)), 1)


def ndcg_at_r(scores, held_out, r: int) -> np.ndarray:
    """Truncated NDCG with ``1 / log2(rank + 1)`` discounts, normalised per user."""
    scores = np.asarray(scores, dtype=np.float64)
    held = np.asarray(held_out) > 0
    top = _top_r(scores, r)
    discount = 1.0 / np.log2(np.arange(2, r + 2))
    dcg = (np.take_along_axis(held, top, axis=1) * discount[: top.shape[1]]).sum(axis=1)
    n_rel = np.minimum(held.sum(axis=1), r)
    idcg = np.array([discount[:n].sum() for n in n_rel])
    return np.where(idcg > 0, dcg / np.where(idcg > 0, idcg, 1.0), 0.0)


def ranking_metrics(scores, held_out, r: int) -> RankingMetrics:
    return RankingMetrics(
        recall_at_R=float(np.mean(recall_at_r(scores, held_out, r))),
        ndcg_at_R=float(np.mean(ndcg_at_r(scores, held_out, r))),
        R=r,
    )


def mask_seen(scores, seen) -> np.ndarray:
    """Push already-observed items to the bottom of the ranking."""
    out = np.array(scores, dtype=np.float64)
    out[np.asarray(seen) > 0] = -np.inf
    return out
