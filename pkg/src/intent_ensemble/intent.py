"""Session intent prediction from context and two levels of history.

The predictor encodes the current context linearly, runs one sequential
encoder over past sessions (their realized intents and contexts) and another
over past positive interactions (each a one-hot intent cell passed through the
same intent encoder), and maps ``[context, session history, item history]``
through a linear layer and a softmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ValidationError
from .types import ContextFeatures, IntentDistribution

N_HOURS = 24
N_DAYS = 7


def context_dim(extra_dim: int = 0) -> int:
    return N_HOURS + N_DAYS + extra_dim


def context_vector(ctx: ContextFeatures, extra_dim: int = 0) -> np.ndarray:
    if len(ctx.extra) != extra_dim:
        raise ValidationError(f"context extra has {len(ctx.extra)} values, expected {extra_dim}")
    v = np.zeros(context_dim(extra_dim), dtype=np.float64)
    v[ctx.hour_of_day] = 1.0
    v[N_HOURS + ctx.day_of_week] = 1.0
    v[N_HOURS + N_DAYS :] = ctx.extra
    return v


@dataclass
class HistoryWindow:
    """Past sessions (oldest first) with realized intents and contexts, plus
    their positive interactions as flattened intent cells (oldest first)."""

    intents: np.ndarray  # (T, D)
    contexts: np.ndarray  # (T, F)
    item_cells: np.ndarray  # (L,)

    @classmethod
    def empty(cls, n_intents: int, ctx_dim: int) -> "HistoryWindow":
        return cls(np.zeros((0, n_intents)), np.zeros((0, ctx_dim)), np.zeros(0, dtype=np.int64))

    def truncated(self, max_sessions: int, max_items: int) -> "HistoryWindow":
        return HistoryWindow(
            self.intents[len(self.intents) - min(len(self.intents), max_sessions) :],
            self.contexts[len(self.contexts) - min(len(self.contexts), max_sessions) :],
            self.item_cells[len(self.item_cells) - min(len(self.item_cells), max_items) :],
        )


@dataclass
class PredictorConfig:
    n_intents: int
    extra_dim: int = 0
    context_embed: int = 16
    intent_embed: int = 16
    hidden: int = 128
    encoder: str = "gru"  # or "transformer"
    heads: int = 2
    max_sessions: int = 20
    max_items: int = 100


class SequenceEncoder(nn.Module):
    """Final hidden state of a causal sequence encoder; zeros for empty sequences."""

    def __init__(self, in_dim: int, hidden: int, kind: str = "gru", heads: int = 2, max_len: int = 128):
        super().__init__()
        self.kind = kind
        self.hidden = hidden
        if kind == "gru":
            self.rnn = nn.GRU(in_dim, hidden, batch_first=True)
        elif kind == "transformer":
            if hidden % heads:
                raise ValidationError("transformer hidden size must be divisible by heads")
            self.inp = nn.Linear(in_dim, hidden)
            self.pos = nn.Embedding(max_len, hidden)
            self.layer = nn.TransformerEncoderLayer(hidden, heads, 2 * hidden, dropout=0.0, batch_first=True)
        else:
            raise ValidationError(f"unknown sequence encoder {kind!r}")

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        B, T, _ = x.shape
        if T == 0:
            return x.new_zeros(B, self.hidden)
        if self.kind == "gru":
            out, _ = self.rnn(x)
        else:
            pos = torch.arange(T, device=x.device)
            h = self.inp(x) + self.pos(pos)
            causal = torch.triu(torch.ones(T, T, dtype=torch.bool, device=x.device), diagonal=1)
            out = self.layer(h, src_mask=causal)
        last = (lengths - 1).clamp_min(0)
        h = out[torch.arange(B, device=x.device), last]
        return h * (lengths > 0).unsqueeze(-1).to(h.dtype)


class IntentPredictor(nn.Module):
    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        f = context_dim(cfg.extra_dim)
        self.context_encoder = nn.Linear(f, cfg.context_embed)
        self.intent_encoder = nn.Linear(cfg.n_intents, cfg.intent_embed)
        in_s = cfg.intent_embed + cfg.context_embed
        self.session_encoder = SequenceEncoder(in_s, cfg.hidden, cfg.encoder, cfg.heads, cfg.max_sessions)
        self.item_encoder = SequenceEncoder(cfg.intent_embed, cfg.hidden, cfg.encoder, cfg.heads, cfg.max_items)
        self.output = nn.Linear(cfg.context_embed + 2 * cfg.hidden, cfg.n_intents)

    def encode_context(self, ctx: torch.Tensor) -> torch.Tensor:
        if ctx.shape[-1] != self.context_encoder.in_features:
            raise ValidationError(f"context has {ctx.shape[-1]} features, expected {self.context_encoder.in_features}")
        return self.context_encoder(ctx)

    def encode_session_history(self, intents, contexts, lengths) -> torch.Tensor:
        x = torch.cat([self.intent_encoder(intents), self.encode_context(contexts)], dim=-1)
        return self.session_encoder(x, lengths)

    def encode_item_history(self, cells, lengths) -> torch.Tensor:
        onehot = F.one_hot(cells.clamp_min(0), self.cfg.n_intents).to(self.intent_encoder.weight.dtype)
        return self.item_encoder(self.intent_encoder(onehot), lengths)

    def logits(self, ctx, hist_intents, hist_contexts, hist_len, item_cells, item_len) -> torch.Tensor:
        c = self.encode_context(ctx)
        h_s = self.encode_session_history(hist_intents, hist_contexts, hist_len)
        h_i = self.encode_item_history(item_cells, item_len)
        return self.output(torch.cat([c, h_s, h_i], dim=-1))

    def forward(self, ctx, hist_intents, hist_contexts, hist_len, item_cells, item_len) -> torch.Tensor:
        return torch.softmax(self.logits(ctx, hist_intents, hist_contexts, hist_len, item_cells, item_len), dim=-1)

    def predict(self, ctx: ContextFeatures, window: HistoryWindow) -> IntentDistribution:
        """Single-session convenience wrapper returning an :class:`IntentDistribution`."""
        w = window.truncated(self.cfg.max_sessions, self.cfg.max_items)
        p = next(self.parameters())
        as_t = lambda a, dt=p.dtype: torch.as_tensor(np.asarray(a), dtype=dt).unsqueeze(0)
        with torch.no_grad():
            probs = self(
                as_t(context_vector(ctx, self.cfg.extra_dim)),
                as_t(w.intents.reshape(-1, self.cfg.n_intents)),
                as_t(w.contexts.reshape(-1, context_dim(self.cfg.extra_dim))),
                torch.tensor([len(w.intents)]),
                as_t(w.item_cells, torch.long),
                torch.tensor([len(w.item_cells)]),
            )[0]
        probs = probs.double().numpy()
        return IntentDistribution(probs / probs.sum())


def historical_average_intent(past_intents: Sequence, dim: int | None = None) -> np.ndarray:
    """Mean of past realized intents, renormalized; uniform when there is no history."""
    arr = np.asarray(past_intents, dtype=np.float64)
    if arr.size == 0:
        if dim is None:
            raise ValidationError("dim is required for an empty history")
        return np.full(dim, 1.0 / dim)
    mean = arr.reshape(-1, arr.shape[-1]).mean(0)
    return mean / mean.sum()

