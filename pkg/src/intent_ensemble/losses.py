"""Point-wise (MSE), pair-wise (BPR) and list-wise (Plackett-Luce) ranking losses.

Every loss accepts either a single session (1-D scores) or a padded batch
(2-D scores plus validity masks) and returns one loss per session. Padded
entries never contribute to a value or a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import NoPairs, ValidationError

# Stand-in for -inf that keeps logcumsumexp gradients finite.
NEG_FILL = -1e4


@dataclass(frozen=True)
class BprPairSet:
    """(positive index, negative index, positive level) triples for one session."""

    pairs: tuple[tuple[int, int, int], ...]

    def __len__(self):
        return len(self.pairs)

    @property
    def pos(self) -> np.ndarray:
        return np.array([p for p, _, _ in self.pairs], dtype=np.int64)

    @property
    def neg(self) -> np.ndarray:
        return np.array([n for _, n, _ in self.pairs], dtype=np.int64)


def _as_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _batched(scores: torch.Tensor, *others):
    single = scores.dim() == 1
    if single:
        return True, scores.unsqueeze(0), [None if o is None else o.unsqueeze(0) for o in others]
    return False, scores, list(others)


def mse_loss(targets, scores, valid=None) -> torch.Tensor:
    """Mean squared error between scores and numeric relevance levels."""
    scores = _as_tensor(scores)
    targets = _as_tensor(targets, scores).to(scores.dtype)
    if scores.shape[-1] == 0:
        raise ValidationError("mse_loss of an empty session")
    if targets.shape != scores.shape:
        raise ValidationError(f"shape mismatch {tuple(targets.shape)} vs {tuple(scores.shape)}")
    if valid is None:
        return ((scores - targets) ** 2).mean(-1)
    valid = valid.to(scores.dtype)
    return (((scores - targets) ** 2) * valid).sum(-1) / valid.sum(-1).clamp_min(1)


def sample_bpr_pairs(levels, rng) -> BprPairSet:
    """Pair each positive with a uniformly drawn item from exactly one level lower.

    Positives whose lower level is empty in the session are skipped.
    ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    levels = np.asarray(levels, dtype=np.int64)
    if not np.any(levels >= 1):
        raise ValidationError("session has no positive item")
    pools = {lvl: np.flatnonzero(levels == lvl) for lvl in np.unique(levels)}
    pairs = []
    for n, lvl in enumerate(levels):
        if lvl < 1:
            continue
        pool = pools.get(lvl - 1)
        if pool is None or pool.size == 0:
            continue
        pairs.append((n, int(pool[rng.integers(pool.size)]), int(lvl)))
    return BprPairSet(tuple(pairs))


def bpr_loss(scores, pos, neg=None, pair_valid=None) -> torch.Tensor:
    """Mean of ``-log sigmoid(S_pos - S_neg)`` over formed pairs.

    ``pos`` may be a :class:`BprPairSet` for a single session.
    """
    scores = _as_tensor(scores)
    if isinstance(pos, BprPairSet):
        if len(pos) == 0:
            raise NoPairs("no BPR pairs formed")
        pos, neg = torch.as_tensor(pos.pos), torch.as_tensor(pos.neg)
    single, s, (p, n, v) = _batched(scores, _as_tensor(pos).long(), _as_tensor(neg).long(), pair_valid)
    if p.shape[-1] == 0:
        raise NoPairs("no BPR pairs formed")
    diff = s.gather(1, p) - s.gather(1, n)
    per = F.softplus(-diff)
    if v is None:
        out = per.mean(-1)
    else:
        v = v.to(s.dtype)
        out = (per * v).sum(-1) / v.sum(-1).clamp_min(1)
    return out[0] if single else out


def pl_loss(scores, order, valid=None) -> torch.Tensor:
    """Plackett-Luce negative log-likelihood of the ground-truth order.

    ``sum_n log(1 + sum_{m>n} exp(-(S_{pi_n} - S_{pi_m})))``. ``order`` lists
    item indices best first; in a batch, ``valid`` flags the real entries of
    ``order`` (padding at the end).
    """
    scores = _as_tensor(scores)
    order = _as_tensor(order).long()
    if scores.shape[-1] == 0:
        raise ValidationError("pl_loss of an empty session")
    single, s, (o, v) = _batched(scores, order, valid)
    ranked = s.gather(1, o)
    if v is None:
        v = torch.ones_like(ranked, dtype=torch.bool)
    filled = torch.where(v, ranked, torch.full_like(ranked, NEG_FILL))
    tail_incl = torch.logcumsumexp(filled.flip(-1), dim=-1).flip(-1)
    tail = torch.cat([tail_incl[:, 1:], torch.full_like(tail_incl[:, :1], NEG_FILL)], dim=1)
    g = F.softplus(tail - ranked) * v.to(s.dtype)
    out = g.sum(-1)
    return out[0] if single else out
