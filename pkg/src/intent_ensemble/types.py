"""Core value types and index conventions.

Index conventions used everywhere in the package:

* behavior levels are contiguous integers ``0..L-1`` with ``examine`` at 0;
* the intent space covers only positive behaviors (level >= 1), so the
  behavior index of level ``l`` is ``l - 1`` and ``|B| = L - 1``;
* a flattened intent cell is ``behavior_index * n_categories + category``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptySession, ValidationError

SIMPLEX_TOL = 1e-6


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BehaviorScheme:
    """Ordered behavior names, weakest first. ``names[0]`` is the examine level."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValidationError("need examine plus at least one positive behavior")
        if len(set(self.names)) != len(self.names):
            raise ValidationError(f"duplicate behavior names: {self.names}")

    @property
    def n_levels(self) -> int:
        return len(self.names)

    @property
    def n_behaviors(self) -> int:
        return len(self.names) - 1

    @property
    def positive_names(self) -> tuple[str, ...]:
        return self.names[1:]

    def level(self, name: str) -> int:
        try:
            return self.names.index(name.strip().lower())
        except ValueError:
            raise ValidationError(f"unknown behavior {name!r}; expected one of {self.names}") from None

    def name(self, level: int) -> str:
        return self.names[level]


TMALL_BEHAVIORS = BehaviorScheme(("examine", "click", "favorite", "buy"))
TWO_BEHAVIORS = BehaviorScheme(("examine", "click", "buy"))


def intent_index(behavior_index: int, category: int, n_categories: int) -> int:
    return behavior_index * n_categories + category


@dataclass(frozen=True)
class BehaviorLevel:
    name: str
    level: int


@dataclass(frozen=True)
class ContextFeatures:
    hour_of_day: int
    day_of_week: int
    extra: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0 <= self.hour_of_day < 24:
            raise ValidationError(f"hour_of_day out of range: {self.hour_of_day}")
        if not 0 <= self.day_of_week < 7:
            raise ValidationError(f"day_of_week out of range: {self.day_of_week}")

    @classmethod
    def from_timestamp(cls, ts: float, extra: Sequence[float] = ()) -> "ContextFeatures":
        import datetime as _dt

        t = _dt.datetime.fromtimestamp(ts, tz=_dt.timezone.utc)
        return cls(t.hour, t.weekday(), tuple(float(x) for x in extra))


@dataclass(frozen=True)
class CandidateItem:
    item_id: str
    category_id: int


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    user_id: str
    timestamp: float
    context: ContextFeatures
    candidates: tuple[CandidateItem, ...]
    interactions: tuple[tuple[str, int], ...]

    def __post_init__(self):
        ids = [c.item_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate candidate ids in session {self.session_id}")

    @property
    def item_ids(self) -> list[str]:
        return [c.item_id for c in self.candidates]

    @property
    def categories(self) -> np.ndarray:
        return np.array([c.category_id for c in self.candidates], dtype=np.int64)

    def positive_interactions(self) -> list[tuple[str, int]]:
        return [(i, lvl) for i, lvl in self.interactions if lvl >= 1]

    def item_levels(self) -> dict[str, int]:
        """Strongest level reached per item."""
        out: dict[str, int] = {}
        for item, lvl in self.interactions:
            out[item] = max(out.get(item, 0), lvl)
        return out


@dataclass(frozen=True)
class ScoreMatrix:
    values: np.ndarray
    mask: np.ndarray
    model_ids: tuple[str, ...]

    def __post_init__(self):
        values = _frozen(self.values, np.float64)
        mask = _frozen(self.mask, bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise ValidationError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        if values.shape[1] != len(self.model_ids):
            raise ValidationError("model_ids length must equal number of columns")
        if not np.all(np.isfinite(values)):
            raise ValidationError("scores must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def n_items(self) -> int:
        return self.values.shape[0]

    @property
    def n_models(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GroundTruth:
    levels: np.ndarray
    pi_order: np.ndarray

    def __post_init__(self):
        levels = _frozen(self.levels, np.int64)
        order = _frozen(self.pi_order, np.int64)
        if sorted(order.tolist()) != list(range(len(levels))):
            raise ValidationError("pi_order is not a permutation")
        if np.any(np.diff(levels[order]) > 0):
            raise ValidationError("levels along pi_order must be non-increasing")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "pi_order", order)

    @classmethod
    def from_levels(cls, levels: Sequence[int], item_ids: Sequence[str]) -> "GroundTruth":
        return cls(np.asarray(levels, dtype=np.int64), derive_pi_order(levels, item_ids))


@dataclass(frozen=True)
class IntentDistribution:
    probs: np.ndarray
    n_categories: int = field(default=0)

    def __post_init__(self):
        p = _frozen(self.probs, np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("intent distribution must be a non-empty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise ValidationError(f"not a probability vector (sum={p.sum():.8g}, min={p.min():.3g})")
        if self.n_categories and p.size % self.n_categories:
            raise ValidationError("dimension must be a multiple of n_categories")
        object.__setattr__(self, "probs", p)

    @property
    def dim(self) -> int:
        return self.probs.size

    @classmethod
    def uniform(cls, dim: int, n_categories: int = 0) -> "IntentDistribution":
        return cls(np.full(dim, 1.0 / dim), n_categories)


@dataclass(frozen=True)
class WeightMatrix:
    values: np.ndarray

    def __post_init__(self):
        w = _frozen(self.values, np.float64)
        if w.ndim != 2:
            raise ValidationError("weight matrix must be 2-D")
        if not is_simplex_rows(w):
            raise ValidationError("weight rows must be non-negative and sum to 1")
        object.__setattr__(self, "values", w)

    @property
    def spread(self) -> float:
        """Largest |w_n^k - w_m^k| over items n, m and models k."""
        return float(np.max(self.values.max(axis=0) - self.values.min(axis=0)))


@dataclass(frozen=True)
class EnsembleScores:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, np.float64))


def is_simplex_rows(w: np.ndarray, tol: float = SIMPLEX_TOL) -> bool:
    w = np.asarray(w)
    return bool(np.all(w >= 0) and np.all(np.abs(w.sum(axis=-1) - 1.0) <= tol))


def derive_pi_order(levels: Sequence[int], item_ids: Sequence[str]) -> np.ndarray:
    """Indices sorted by level descending, ties by ascending item id."""
    levels = list(levels)
    item_ids = list(item_ids)
    if not levels:
        raise EmptySession("cannot order an empty session")
    if len(levels) != len(item_ids):
        raise ValidationError("levels and item_ids differ in length")
    if any(int(lvl) < 0 for lvl in levels):
        raise ValidationError("levels must be non-negative")
    order = sorted(range(len(levels)), key=lambda i: (-int(levels[i]), item_ids[i]))
    return np.array(order, dtype=np.int64)


def tie_ranks(item_ids: Sequence[str]) -> np.ndarray:
    """Position of each id in ascending id order; used as a numeric tie breaker."""
    order = sorted(range(len(item_ids)), key=lambda i: item_ids[i])
    ranks = np.empty(len(item_ids), dtype=np.int64)
    ranks[order] = np.arange(len(item_ids))
    return ranks


def rank_by_scores(scores: Sequence[float], item_ids: Sequence[str]) -> np.ndarray:
    """Indices sorted by score descending, ties by ascending item id."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((tie_ranks(item_ids), -scores))
