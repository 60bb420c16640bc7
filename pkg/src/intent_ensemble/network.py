"""Intent-aware ensemble module producing per-item, per-model weights.

Pipeline for a padded batch of sessions:

1. score branch: each item's ``[S_n^1..S_n^K, mask_n^1..mask_n^K]`` is embedded
   linearly and passed through ``layers`` residual blocks of multi-head
   self-attention over the session's items and a position-wise feed-forward
   layer;
2. category branch: the same with a category embedding as the token input;
3. the session intent is projected (``Int_d``) and, through a query
   projection shared by both branches, attends over each branch's item rows;
4. ``[A_s, A_i, Int_d]`` per item is projected to K logits, softmaxed over K.

Cross-attention output for item n is ``N * a_n * V r_n``: the item's own
attention-weighted value, rescaled so that uniform attention returns ``V r_n``.
Its average over items is the usual pooled attention output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
from torch import nn

from .errors import NoInputBranches, OutOfVocabulary, ValidationError

ABLATION_FLAGS = {"-Int": "no_intent", "-I": "no_items", "-S": "no_scores", "-Cross": "no_cross", "-Self": "no_self"}


@dataclass(frozen=True)
class Ablation:
    no_intent: bool = False
    no_items: bool = False
    no_scores: bool = False
    no_cross: bool = False
    no_self: bool = False

    def __post_init__(self):
        if self.no_items and self.no_scores:
            raise NoInputBranches("cannot drop both the score and the category branch")

    @classmethod
    def from_names(cls, names) -> "Ablation":
        unknown = [n for n in names if n not in ABLATION_FLAGS]
        if unknown:
            raise ValidationError(f"unknown ablation flags {unknown}; choose from {list(ABLATION_FLAGS)}")
        return cls(**{ABLATION_FLAGS[n]: True for n in names})

    @property
    def names(self) -> list[str]:
        on = {f.name for f in fields(self) if getattr(self, f.name)}
        return [k for k, v in ABLATION_FLAGS.items() if v in on]


@dataclass
class NetworkConfig:
    n_models: int
    n_categories: int
    n_intents: int
    d_e: int = 32
    d_int: int = 16
    heads: int = 2
    layers: int = 1
    weight_head: str = "simplex"  # or "unconstrained"
    list_level: bool = False

    def __post_init__(self):
        if self.d_e % self.heads:
            raise ValidationError("d_e must be divisible by heads")
        if self.layers < 1:
            raise ValidationError("need at least one self-attention layer")
        if self.weight_head not in ("simplex", "unconstrained"):
            raise ValidationError(f"unknown weight head {self.weight_head!r}")


class SelfAttentionStack(nn.Module):
    """``layers`` blocks of ``x <- x + MHA(x, x, x)``, ``x <- x + FFN(x)``.

    Padded items are masked as keys. There is no normalization, so identical
    input rows stay identical.
    """

    def __init__(self, d: int, heads: int, layers: int):
        super().__init__()
        self.attn = nn.ModuleList(nn.MultiheadAttention(d, heads, batch_first=True) for _ in range(layers))
        self.ffn = nn.ModuleList(
            nn.Sequential(nn.Linear(d, 2 * d), nn.ReLU(), nn.Linear(2 * d, d)) for _ in range(layers)
        )

    def forward(self, x, valid):
        pad = ~valid
        for attn, ffn in zip(self.attn, self.ffn):
            out, _ = attn(x, x, x, key_padding_mask=pad, need_weights=False)
            x = x + out
            x = x + ffn(x)
        return x


def masked_softmax(logits, valid, dim=-1):
    return torch.softmax(logits.masked_fill(~valid, -torch.inf), dim=dim)


class IntentCrossAttention(nn.Module):
    """Broadcast intent query over one branch's item rows (keys are the rows themselves)."""

    def __init__(self, d_e: int, query: nn.Linear):
        super().__init__()
        self.query = query
        self.value = nn.Linear(d_e, d_e)
        self.d_e = d_e

    def attention(self, int_d, reps, valid):
        q = self.query(int_d)  # (B, d_e)
        logits = (reps * q.unsqueeze(1)).sum(-1) / math.sqrt(self.d_e)
        return masked_softmax(logits, valid)

    def forward(self, int_d, reps, valid):
        if int_d.shape[-1] != self.query.in_features or reps.shape[-1] != self.d_e:
            raise ValidationError("cross-attention dimension mismatch")
        a = self.attention(int_d, reps, valid)
        n = valid.sum(-1, keepdim=True).to(a.dtype)
        return (n * a).unsqueeze(-1) * self.value(reps)


class EnsembleNet(nn.Module):
    def __init__(self, cfg: NetworkConfig, ablation: Ablation = Ablation()):
        super().__init__()
        self.cfg = cfg
        self.ablation = ablation
        K, d_e = cfg.n_models, cfg.d_e
        self.score_embed = nn.Linear(2 * K, d_e)
        self.score_attn = SelfAttentionStack(d_e, cfg.heads, cfg.layers)
        self.category_embed = nn.Embedding(cfg.n_categories, d_e)
        self.category_attn = SelfAttentionStack(d_e, cfg.heads, cfg.layers)
        self.intent_proj = nn.Linear(cfg.n_intents, cfg.d_int, bias=False)
        self.query = nn.Linear(cfg.d_int, d_e, bias=False)
        self.score_cross = IntentCrossAttention(d_e, self.query)
        self.category_cross = IntentCrossAttention(d_e, self.query)
        n_branches = int(not ablation.no_scores) + int(not ablation.no_items)
        self.weight_head = nn.Linear(n_branches * d_e + cfg.d_int, K)

    def embed_scores(self, scores, mask, valid):
        if scores.shape[-2] == 0:
            raise ValidationError("empty session")
        x = self.score_embed(torch.cat([scores, mask.to(scores.dtype)], dim=-1))
        return x if self.ablation.no_self else self.score_attn(x, valid)

    def embed_categories(self, categories, valid):
        if categories.shape[-1] == 0:
            raise ValidationError("empty session")
        real = categories[valid]
        if real.numel() and (real.min() < 0 or real.max() >= self.cfg.n_categories):
            raise OutOfVocabulary(f"category id outside [0, {self.cfg.n_categories})")
        x = self.category_embed(categories.clamp(0, self.cfg.n_categories - 1))
        return x if self.ablation.no_self else self.category_attn(x, valid)

    def project_intent(self, intent, batch: int, like: torch.Tensor):
        if intent is None or self.ablation.no_intent:
            return like.new_zeros(batch, self.cfg.d_int)
        return self.intent_proj(intent)

    def compute_weights(self, features, valid):
        logits = self.weight_head(features)
        if self.cfg.list_level:
            v = valid.unsqueeze(-1).to(logits.dtype)
            pooled = (logits * v).sum(1, keepdim=True) / v.sum(1, keepdim=True).clamp_min(1)
            logits = pooled.expand_as(logits)
        if self.cfg.weight_head == "simplex":
            return torch.softmax(logits, dim=-1)
        return logits

    def forward(self, scores, mask, categories, valid, intent=None):
        """Returns ``(weights (B, N, K), ensemble scores (B, N))``; 2-D inputs are one session."""
        single = scores.dim() == 2
        if single:
            scores, mask, categories, valid = (t.unsqueeze(0) for t in (scores, mask, categories, valid))
            intent = None if intent is None else intent.unsqueeze(0)
        B = scores.shape[0]
        int_d = self.project_intent(intent, B, scores)
        parts = []
        if not self.ablation.no_scores:
            s = self.embed_scores(scores, mask, valid)
            parts.append(s if self.ablation.no_cross else self.score_cross(int_d, s, valid))
        if not self.ablation.no_items:
            c = self.embed_categories(categories, valid)
            parts.append(c if self.ablation.no_cross else self.category_cross(int_d, c, valid))
        parts.append(int_d.unsqueeze(1).expand(-1, scores.shape[1], -1))
        weights = self.compute_weights(torch.cat(parts, dim=-1), valid)
        ens = ensemble_scores(weights, scores)
        if single:
            return weights[0], ens[0]
        return weights, ens


def ensemble_scores(weights, scores):
    """``S_n^ens = sum_k w_n^k S_n^k``."""
    if weights.shape != scores.shape:
        raise ValidationError(f"weights {tuple(weights.shape)} and scores {tuple(scores.shape)} differ")
    return (weights * scores).sum(-1)
