"""NDCG over multi-level feedback, intent-prediction metrics and run reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_KS = (3, 5, 10)


def dcg(relevance_in_rank_order, k: int) -> float:
    rel = np.asarray(relevance_in_rank_order, dtype=np.float64)[:k]
    return float(((2.0**rel - 1.0) / np.log2(np.arange(2, rel.size + 2))).sum())


def ndcg_at_k(ranking, relevance, k: int) -> float:
    """NDCG@k with gain ``2^r - 1`` and discount ``log2(position + 1)``.

    ``ranking`` lists item indices best first. All-zero relevance gives 0.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    rel = np.asarray(relevance, dtype=np.float64)
    if np.any(rel < 0):
        raise ValidationError("relevance must be non-negative")
    ranking = np.asarray(ranking, dtype=np.int64)
    if ranking.size != rel.size:
        raise ValidationError("ranking and relevance lengths differ")
    ideal = dcg(np.sort(rel)[::-1], k)
    if ideal == 0:
        return 0.0
    return dcg(rel[ranking], k) / ideal


def per_objective_relevance(levels, objective: str, behaviors: Sequence[str], mode: str = "threshold") -> np.ndarray:
    """Relevance vector for ``"all"`` (the level itself) or one behavior.

    In ``"threshold"`` mode an item is relevant to behavior b when its level is
    at least b's level; ``"exact"`` requires equality.
    """
    levels = np.asarray(levels, dtype=np.int64)
    if objective == "all":
        return levels.astype(np.float64)
    names = [b.lower() for b in behaviors]
    obj = objective.lower()
    if obj not in names[1:]:
        raise ValidationError(f"unknown objective {objective!r}; expected 'all' or one of {names[1:]}")
    lvl = names.index(obj)
    if mode == "threshold":
        return (levels >= lvl).astype(np.float64)
    if mode == "exact":
        return (levels == lvl).astype(np.float64)
    raise ValidationError(f"unknown relevance mode {mode!r}")


def intent_ndcg(true, pred, k: int = 10) -> float:
    """Cells ranked by predicted probability (ties by index), true probabilities as relevance."""
    true, pred = np.asarray(true, np.float64), np.asarray(pred, np.float64)
    ranking = np.lexsort((np.arange(pred.size), -pred))
    return ndcg_at_k(ranking, true, k)


def macro_f1(true, pred, threshold: float | None = None) -> float:
    """Macro-F1 of binarized intents, pooled over sessions, averaged over supported cells.

    Both arrays are (sessions, dim) or (dim,); a cell is on when its
    probability is at least ``threshold`` (default ``1 / (2 * dim)``).
    """
    true, pred = np.atleast_2d(np.asarray(true, np.float64)), np.atleast_2d(np.asarray(pred, np.float64))
    thr = 1.0 / (2 * true.shape[1]) if threshold is None else threshold
    t, p = true >= thr, pred >= thr
    tp = (t & p).sum(0)
    fp = (~t & p).sum(0)
    fn = (t & ~p).sum(0)
    support = (tp + fp + fn) > 0
    if not support.any():
        return 1.0
    f1 = 2 * tp[support] / (2 * tp[support] + fp[support] + fn[support])
    return float(f1.mean())


def intent_metrics(true, pred, mode: str = "ndcg@10", threshold: float | None = None) -> float:
    true, pred = np.asarray(true, np.float64), np.asarray(pred, np.float64)
    if true.shape != pred.shape:
        raise ValidationError(f"intent dimension mismatch {true.shape} vs {pred.shape}")
    if mode == "macro_f1":
        return macro_f1(true, pred, threshold)
    if mode.startswith("ndcg@"):
        k = int(mode.split("@")[1])
        if true.ndim == 1:
            return intent_ndcg(true, pred, k)
        return float(np.mean([intent_ndcg(t, p, k) for t, p in zip(true, pred)]))
    raise ValidationError(f"unknown intent metric mode {mode!r}")


def metric_name(objective: str, k: int) -> str:
    return f"{objective.capitalize() if objective != 'all' else 'All'}-NDCG@{k}"


def session_metrics(ranking, levels, behaviors, objectives, ks=DEFAULT_KS, mode="threshold") -> dict[str, float]:
    out = {}
    for obj in objectives:
        rel = per_objective_relevance(levels, obj, behaviors, mode)
        for k in ks:
            out[metric_name(obj, k)] = ndcg_at_k(ranking, rel, k)
    return out


@dataclass
class MetricsReport:
    """metric name -> mean/std over seeds of the per-seed session averages,
    plus free-form run metadata (method, ablation, loss, ...)."""

    entries: dict[str, dict] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def mean(self, name: str) -> float:
        return self.entries[name]["mean"]

    def to_json(self) -> str:
        return json.dumps({"meta": self.meta, "metrics": self.entries}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        obj = json.loads(text)
        return cls(obj["metrics"], obj.get("meta", {}))

    @classmethod
    def read(cls, path) -> "MetricsReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def aggregate(cls, per_seed: Sequence[Mapping[str, float]], n_sessions: int, meta=None) -> "MetricsReport":
        entries = {}
        for name in sorted(per_seed[0]):
            vals = [float(r[name]) for r in per_seed]
            entries[name] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals)),
                "n_sessions": n_sessions,
                "per_seed": vals,
            }
        return cls(entries, dict(meta or {}))


def evaluate_run(
    rankings: Mapping[str, Sequence[int]],
    sessions: Sequence,
    objectives: Sequence[str] | None = None,
    ks=DEFAULT_KS,
    mode: str = "threshold",
) -> dict[str, float]:
    """Uniform average over ``sessions`` of per-session NDCG for each objective and k.

    ``sessions`` are :class:`~.pipeline.EnsembleSession` objects; ``rankings``
    maps session id to a ranking over that session's candidates.
    """
    missing = [s.session_id for s in sessions if s.session_id not in rankings]
    if missing:
        raise ValidationError(f"missing rankings for sessions: {missing[:10]}{'...' if len(missing) > 10 else ''}")
    if not sessions:
        raise ValidationError("no sessions to evaluate")
    behaviors = sessions[0].behaviors
    if objectives is None:
        objectives = ["all", *behaviors[1:]]
    totals: dict[str, float] = {}
    for s in sessions:
        m = session_metrics(rankings[s.session_id], s.gt.levels, behaviors, objectives, ks, mode)
        for name, v in m.items():
            totals[name] = totals.get(name, 0.0) + v
    return {name: v / len(sessions) for name, v in totals.items()}
