"""Padded tensor views of assembled sessions, with per-session history windows."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .intent import context_vector, historical_average_intent
from .losses import sample_bpr_pairs
from .pipeline import EnsembleSession
from .types import intent_index, tie_ranks


@dataclass
class SessionTensors:
    """Arrays for a subset of sessions; histories index into ``all_*`` arrays."""

    session_ids: list[str]
    n_items: np.ndarray  # (S,)
    scores: np.ndarray  # (S, N, K)
    mask: np.ndarray  # (S, N, K)
    categories: np.ndarray  # (S, N)
    levels: np.ndarray  # (S, N)
    order: np.ndarray  # (S, N) pi order, padded with 0
    tie: np.ndarray  # (S, N) rank of item id within session
    intent: np.ndarray  # (S, D) realized intent
    context: np.ndarray  # (S, F)
    hist_idx: np.ndarray  # (S, T) rows of all_intent/all_context, -1 padded
    hist_len: np.ndarray  # (S,)
    item_cells: np.ndarray  # (S, L), -1 padded
    item_len: np.ndarray  # (S,)
    his_avg: np.ndarray  # (S, D)
    all_intent: np.ndarray  # (S_all, D)
    all_context: np.ndarray  # (S_all, F)

    def __len__(self):
        return len(self.session_ids)

    @property
    def n_intents(self) -> int:
        return self.intent.shape[1]


def _history(sessions: Sequence[EnsembleSession], max_sessions: int, max_items: int):
    """For every session: indices of up to ``max_sessions`` earlier sessions of the
    same user (oldest first) and their positive interactions as intent cells."""
    by_user = defaultdict(list)
    for i, s in enumerate(sessions):
        by_user[s.record.user_id].append(i)
    hist: dict[int, list[int]] = {}
    cells: dict[int, list[int]] = {}
    session_cells = []
    for s in sessions:
        C = s.intent.n_categories
        cats = {c.item_id: c.category_id for c in s.record.candidates}
        session_cells.append([intent_index(lvl - 1, cats[i], C) for i, lvl in s.record.positive_interactions()])
    for idxs in by_user.values():
        idxs.sort(key=lambda i: (sessions[i].record.timestamp, sessions[i].session_id))
        for pos, i in enumerate(idxs):
            ts = sessions[i].record.timestamp
            past = [j for j in idxs[:pos] if sessions[j].record.timestamp < ts][-max_sessions:]
            hist[i] = past
            c = [cell for j in past for cell in session_cells[j]]
            cells[i] = c[-max_items:] if max_items else []
    return hist, cells


def build_tensors(
    all_sessions: Sequence[EnsembleSession],
    subset: Sequence[int] | None = None,
    max_sessions: int = 20,
    max_items: int = 100,
    extra_dim: int = 0,
) -> SessionTensors:
    """Tensorize ``all_sessions[subset]``; histories may reach into any session."""
    if subset is None:
        subset = range(len(all_sessions))
    subset = list(subset)
    hist, cells = _history(all_sessions, max_sessions, max_items)
    D = all_sessions[0].intent.dim
    K = all_sessions[0].scores.n_models
    all_intent = np.stack([s.intent.probs for s in all_sessions])
    all_context = np.stack([context_vector(s.record.context, extra_dim) for s in all_sessions])

    S = len(subset)
    N = max(all_sessions[i].n_items for i in subset)
    T = max(1, max((len(hist[i]) for i in subset), default=0))
    L = max(1, max((len(cells[i]) for i in subset), default=0))
    out = dict(
        n_items=np.zeros(S, np.int64),
        scores=np.zeros((S, N, K)),
        mask=np.zeros((S, N, K), bool),
        categories=np.zeros((S, N), np.int64),
        levels=np.zeros((S, N), np.int64),
        order=np.zeros((S, N), np.int64),
        tie=np.zeros((S, N), np.int64),
        hist_idx=np.full((S, T), -1, np.int64),
        hist_len=np.zeros(S, np.int64),
        item_cells=np.full((S, L), -1, np.int64),
        item_len=np.zeros(S, np.int64),
        his_avg=np.zeros((S, D)),
    )
    for r, i in enumerate(subset):
        s = all_sessions[i]
        n = s.n_items
        out["n_items"][r] = n
        out["scores"][r, :n] = s.scores.values
        out["mask"][r, :n] = s.scores.mask
        out["categories"][r, :n] = s.record.categories
        out["levels"][r, :n] = s.gt.levels
        out["order"][r, :n] = s.gt.pi_order
        out["tie"][r, :n] = tie_ranks(s.record.item_ids)
        h = hist[i]
        out["hist_idx"][r, : len(h)] = h
        out["hist_len"][r] = len(h)
        c = cells[i]
        out["item_cells"][r, : len(c)] = c
        out["item_len"][r] = len(c)
        out["his_avg"][r] = historical_average_intent(all_intent[h], D)
    return SessionTensors(
        session_ids=[all_sessions[i].session_id for i in subset],
        intent=all_intent[subset],
        context=all_context[subset],
        all_intent=all_intent,
        all_context=all_context,
        **out,
    )


def sample_pairs(data: SessionTensors, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One BPR negative per positive for every session: (pos, neg, valid), each (S, P)."""
    sets = [sample_bpr_pairs(data.levels[r, : data.n_items[r]], rng) for r in range(len(data))]
    P = max(1, max(len(p) for p in sets))
    pos = np.zeros((len(data), P), np.int64)
    neg = np.zeros((len(data), P), np.int64)
    valid = np.zeros((len(data), P), bool)
    for r, ps in enumerate(sets):
        m = len(ps)
        if m:
            pos[r, :m], neg[r, :m], valid[r, :m] = ps.pos, ps.neg, True
    return pos, neg, valid


@dataclass
class Batch:
    rows: np.ndarray
    scores: torch.Tensor
    mask: torch.Tensor
    categories: torch.Tensor
    valid: torch.Tensor
    levels: torch.Tensor
    order: torch.Tensor
    order_valid: torch.Tensor
    intent: torch.Tensor
    his_avg: torch.Tensor
    context: torch.Tensor
    hist_intent: torch.Tensor
    hist_context: torch.Tensor
    hist_len: torch.Tensor
    item_cells: torch.Tensor
    item_len: torch.Tensor
    pos: torch.Tensor | None = None
    neg: torch.Tensor | None = None
    pair_valid: torch.Tensor | None = None


def make_batch(data: SessionTensors, rows, dtype=torch.float32, pairs=None) -> Batch:
    rows = np.asarray(rows)
    n = data.n_items[rows]
    N = int(n.max())
    T = max(1, int(data.hist_len[rows].max()))
    L = max(1, int(data.item_len[rows].max()))
    valid = np.arange(N)[None, :] < n[:, None]
    hidx = data.hist_idx[rows, :T]
    hmask = (hidx >= 0)[..., None]
    f = lambda a: torch.as_tensor(a, dtype=dtype)
    i = lambda a: torch.as_tensor(a, dtype=torch.long)
    b = Batch(
        rows=rows,
        scores=f(data.scores[rows, :N]),
        mask=torch.as_tensor(data.mask[rows, :N]),
        categories=i(data.categories[rows, :N]),
        valid=torch.as_tensor(valid),
        levels=f(data.levels[rows, :N]),
        order=i(data.order[rows, :N]),
        order_valid=torch.as_tensor(valid),
        intent=f(data.intent[rows]),
        his_avg=f(data.his_avg[rows]),
        context=f(data.context[rows]),
        hist_intent=f(data.all_intent[hidx.clip(0)] * hmask),
        hist_context=f(data.all_context[hidx.clip(0)] * hmask),
        hist_len=i(data.hist_len[rows]),
        item_cells=i(data.item_cells[rows, :L]),
        item_len=i(data.item_len[rows]),
    )
    if pairs is not None:
        pos, neg, pv = pairs
        keep = max(1, int(pv[rows].sum(1).max()))
        b.pos, b.neg, b.pair_valid = i(pos[rows, :keep]), i(neg[rows, :keep]), torch.as_tensor(pv[rows, :keep])
    return b
