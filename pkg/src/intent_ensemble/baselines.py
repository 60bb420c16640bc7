"""Unsupervised rank-aggregation baselines.

The list-level-weight learner lives in :mod:`.network` (``list_level=True``).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import beta

from .errors import ValidationError
from .types import ScoreMatrix, tie_ranks


def _ids(item_ids, n):
    return list(item_ids) if item_ids is not None else [f"{i:09d}" for i in range(n)]


def single_model(scores: ScoreMatrix, k: int, item_ids: Sequence[str] | None = None) -> np.ndarray:
    """Items by column ``k`` descending, ties by ascending item id."""
    if not 0 <= k < scores.n_models:
        raise ValidationError(f"model index {k} out of range for {scores.n_models} models")
    ids = _ids(item_ids, scores.n_items)
    return np.lexsort((tie_ranks(ids), -scores.values[:, k]))


def model_rankings(scores: ScoreMatrix, item_ids: Sequence[str] | None = None) -> list[np.ndarray]:
    """Each model's ranking over the items it proposed (mask true)."""
    ids = _ids(item_ids, scores.n_items)
    out = []
    for k in range(scores.n_models):
        order = single_model(scores, k, ids)
        out.append(order[scores.mask[order, k]])
    return out


def _rank_table(rankings: Sequence[Sequence[int]], n_items: int) -> np.ndarray:
    """(K, N) 1-based ranks; items absent from a list get N + 1."""
    ranks = np.full((len(rankings), n_items), n_items + 1, dtype=np.float64)
    for k, r in enumerate(rankings):
        r = np.asarray(r, dtype=np.int64)
        if len(set(r.tolist())) != r.size or (r.size and (r.min() < 0 or r.max() >= n_items)):
            raise ValidationError(f"ranking {k} is not a partial permutation of {n_items} items")
        ranks[k, r] = np.arange(1, r.size + 1)
    return ranks


def borda(rankings: Sequence[Sequence[int]], n_items: int | None = None, item_ids=None) -> np.ndarray:
    """Ascending mean rank over lists; missing items rank N + 1; ties by item id."""
    if not rankings:
        raise ValidationError("borda needs at least one ranking")
    if n_items is None:
        n_items = max(len(r) for r in rankings)
    ranks = _rank_table(rankings, n_items)
    mean_rank = ranks.mean(0)
    return np.lexsort((tie_ranks(_ids(item_ids, n_items)), mean_rank))


def rra_scores(rankings: Sequence[Sequence[int]], n_items: int) -> np.ndarray:
    """Robust rank aggregation rho per item: min over j of BetaCDF(r_(j); j, K - j + 1)."""
    if n_items < 1:
        raise ValidationError("rra needs at least one item")
    ranks = _rank_table(rankings, n_items)
    normed = np.where(ranks > n_items, 1.0, ranks / n_items)
    r_sorted = np.sort(normed, axis=0)  # (K, N)
    K = r_sorted.shape[0]
    j = np.arange(1, K + 1)[:, None]
    p = beta.cdf(r_sorted, j, K - j + 1)
    return p.min(axis=0)


def rra(rankings: Sequence[Sequence[int]], n_items: int | None = None, item_ids=None) -> np.ndarray:
    """Items by ascending rho, ties by item id."""
    if n_items is None:
        n_items = max((len(r) for r in rankings), default=0)
    rho = rra_scores(rankings, n_items)
    return np.lexsort((tie_ranks(_ids(item_ids, n_items)), rho))


def aggregate_scores(scores: ScoreMatrix, method: str, item_ids: Sequence[str] | None = None) -> np.ndarray:
    """Rank one session's items with ``single:<k>``, ``borda`` or ``rra``."""
    ids = _ids(item_ids, scores.n_items)
    if method.startswith("single:"):
        try:
            k = int(method.split(":", 1)[1])
        except ValueError as exc:
            raise ValidationError(f"bad method {method!r}") from exc
        return single_model(scores, k, ids)
    if method == "borda":
        return borda(model_rankings(scores, ids), scores.n_items, ids)
    if method == "rra":
        return rra(model_rankings(scores, ids), scores.n_items, ids)
    raise ValidationError(f"{method!r} is not single:<k>, borda or rra")
