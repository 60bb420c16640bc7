"""Ambiguity terms, the KL intent loss and the joint training objective.

All ambiguity terms here use the expansion point at the ensemble score
itself (interpolation parameter taken to 0), so they are closed-form in the
current scores. The exact-remainder versions live in :mod:`.theorems`.

Shapes: ``basic`` is (..., N, K), ``ens`` is (..., N), ``weights`` is (..., N, K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import NoPairs, NonFiniteLoss, ValidationError
from .losses import BprPairSet

KL_EPS = 1e-8


@dataclass
class AmbiguityReport:
    per_item_per_model: torch.Tensor
    weighted_total: torch.Tensor


def _check(basic, ens, weights):
    if basic.shape != weights.shape or basic.shape[:-1] != ens.shape:
        raise ValidationError(
            f"shape mismatch: basic {tuple(basic.shape)}, ens {tuple(ens.shape)}, weights {tuple(weights.shape)}"
        )


def mse_ambiguity(basic, ens, weights, valid=None) -> AmbiguityReport:
    """``A_n^k = (S_n^k - S_n^ens)^2``; total is the weighted sum averaged over items."""
    _check(basic, ens, weights)
    amb = (basic - ens.unsqueeze(-1)) ** 2
    per_item = (weights * amb).sum(-1)
    if valid is None:
        total = per_item.mean(-1)
    else:
        v = valid.to(per_item.dtype)
        total = (per_item * v).sum(-1) / v.sum(-1).clamp_min(1)
    return AmbiguityReport(amb, total)


def bpr_ambiguity(basic, ens, weights, pos, neg=None, pair_valid=None, printed_form=False) -> AmbiguityReport:
    """Second-order BPR spread per pair and model, averaged over pairs.

    ``A_nm^k = 0.5 * s(1-s) * (z_nm^k - z_nm^ens)^2`` with ``s = sigmoid(z_nm^ens)``,
    weighted by the positive item's weights. ``printed_form=True`` instead
    evaluates ``s(1-s) * sum_k w_n^k (z^k - z^ens)^2`` (no 1/2, weights nested)
    for every k.
    """
    _check(basic, ens, weights)
    if isinstance(pos, BprPairSet):
        if len(pos) == 0:
            raise NoPairs("no pairs for BPR ambiguity")
        pos, neg = torch.as_tensor(pos.pos), torch.as_tensor(pos.neg)
    single = ens.dim() == 1
    if single:
        basic, ens, weights = basic.unsqueeze(0), ens.unsqueeze(0), weights.unsqueeze(0)
        pos, neg = pos.unsqueeze(0), neg.unsqueeze(0)
        pair_valid = None if pair_valid is None else pair_valid.unsqueeze(0)
    if pos.shape[-1] == 0:
        raise NoPairs("no pairs for BPR ambiguity")
    K = basic.shape[-1]
    pk = pos.unsqueeze(-1).expand(-1, -1, K)
    nk = neg.unsqueeze(-1).expand(-1, -1, K)
    z_k = basic.gather(1, pk) - basic.gather(1, nk)
    z_ens = ens.gather(1, pos) - ens.gather(1, neg)
    sig = torch.sigmoid(z_ens)
    curv = (sig * (1 - sig)).unsqueeze(-1)
    w_pos = weights.gather(1, pk)
    sq = (z_k - z_ens.unsqueeze(-1)) ** 2
    if printed_form:
        amb = (curv * (w_pos * sq).sum(-1, keepdim=True)).expand_as(sq)
    else:
        amb = 0.5 * curv * sq
    per_pair = (w_pos * amb).sum(-1)
    if pair_valid is None:
        total = per_pair.mean(-1)
    else:
        v = pair_valid.to(per_pair.dtype)
        total = (per_pair * v).sum(-1) / v.sum(-1).clamp_min(1)
    if single:
        return AmbiguityReport(amb[0], total[0])
    return AmbiguityReport(amb, total)


def pl_ambiguity(basic, ens, weights, order, valid=None, printed_form=False) -> AmbiguityReport:
    """Position-wise list-wise spread along the ground-truth order.

    For position n and model k::

        A_n^k = [sum_{m>n} e^{-z_nm} (z_nm^k - z_nm)]^2 / (1 + sum_{m>n} e^{-z_nm})^2

    with ``z`` the ensemble score differences. ``printed_form=True`` uses
    ``e^{+z}`` in the denominator instead. ``per_item_per_model`` is indexed by
    position along ``order``; the total sums over positions.
    """
    _check(basic, ens, weights)
    single = ens.dim() == 1
    if single:
        basic, ens, weights, order = basic.unsqueeze(0), ens.unsqueeze(0), weights.unsqueeze(0), order.unsqueeze(0)
        valid = None if valid is None else valid.unsqueeze(0)
    order = order.long()
    B, N, K = basic.shape
    if valid is None:
        valid = torch.ones(B, N, dtype=torch.bool, device=basic.device)
    ok = order.unsqueeze(-1).expand(-1, -1, K)
    sb = basic.gather(1, ok)
    se = ens.gather(1, order)
    ws = weights.gather(1, ok)

    z_ens = se.unsqueeze(2) - se.unsqueeze(1)  # [b, n, m]
    z_k = sb.unsqueeze(2) - sb.unsqueeze(1)  # [b, n, m, k]
    d = z_k - z_ens.unsqueeze(-1)
    idx = torch.arange(N, device=basic.device)
    tail = (idx.unsqueeze(1) < idx.unsqueeze(0)).unsqueeze(0) & valid.unsqueeze(1) & valid.unsqueeze(2)

    if printed_form:
        num = torch.where(tail, torch.exp(-z_ens), torch.zeros_like(z_ens))
        den = 1 + torch.where(tail, torch.exp(z_ens), torch.zeros_like(z_ens)).sum(-1)
        lin = (num.unsqueeze(-1) * d).sum(2) / den.unsqueeze(-1)
    else:
        # e^{-z}/(1 + sum e^{-z}) as a softmax with an extra zero logit, for stability
        logits = torch.where(tail, -z_ens, torch.full_like(z_ens, -torch.inf))
        logits = torch.cat([torch.zeros_like(logits[..., :1]), logits], dim=-1)
        p = torch.softmax(logits, dim=-1)[..., 1:]
        lin = (p.unsqueeze(-1) * d).sum(2)
    amb = lin**2 * valid.unsqueeze(-1).to(lin.dtype)
    total = (ws * amb).sum((-1, -2))
    if single:
        return AmbiguityReport(amb[0], total[0])
    return AmbiguityReport(amb, total)


def intent_kl(true, pred, eps: float = KL_EPS) -> torch.Tensor:
    """``KL(true || pred)`` with ``eps`` smoothing of ``pred``; zero-mass true cells contribute 0."""
    if true.shape != pred.shape:
        raise ValidationError(f"intent dimension mismatch {tuple(true.shape)} vs {tuple(pred.shape)}")
    pos = true > 0
    safe_true = torch.where(pos, true, torch.ones_like(true))
    terms = torch.where(pos, true * (torch.log(safe_true) - torch.log(pred + eps)), torch.zeros_like(true))
    return terms.sum(-1)


def _finite(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return math.isfinite(x)


def joint_loss(l_ens, amb, l_int, alpha: float, gamma: float):
    """``l_ens - alpha * A + gamma * l_int``."""
    if alpha < 0 or gamma < 0:
        raise ValidationError("alpha and gamma must be non-negative")
    for name, val in (("l_ens", l_ens), ("ambiguity", amb), ("l_int", l_int), ("alpha", alpha), ("gamma", gamma)):
        if not _finite(val):
            raise NonFiniteLoss(f"non-finite {name}: {val}")
    return l_ens - alpha * amb + gamma * l_int
