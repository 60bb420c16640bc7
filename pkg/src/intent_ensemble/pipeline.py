"""Raw logs to per-session ensemble inputs.

The flow is ``read_interactions -> filter_min_positive -> build_sessions ->
assemble_candidates -> normalize_and_impute`` plus ``compute_intent_gt`` for
the intent target, and ``temporal_split`` for train/validation/test.

Session ids produced by :func:`build_sessions` are ``"<user_id>|<YYYY-MM-DD>"``
under the calendar-day rule and ``"<user_id>|<visit_id>"`` under the visit
rule; basic list files must use the same ids.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptySplit,
    InsufficientTimespan,
    MissingBasicList,
    NoPositives,
    UnknownItem,
    ValidationError,
)
from .types import (
    BehaviorScheme,
    CandidateItem,
    ContextFeatures,
    GroundTruth,
    IntentDistribution,
    ScoreMatrix,
    SessionRecord,
    intent_index,
)

log = logging.getLogger(__name__)

DAY_SECONDS = 86400
TEST_DAYS = 7
VALIDATION_DAYS = 3

BasicLists = Mapping[tuple[str, str], Sequence[tuple[str, float]]]


@dataclass(frozen=True)
class InteractionEvent:
    user_id: str
    item_id: str
    category_id: int
    behavior: int
    timestamp: float
    visit_id: str | None = None


@dataclass(frozen=True)
class EnsembleSession:
    """One fully assembled session: a line of ``sessions.jsonl``."""

    record: SessionRecord
    scores: ScoreMatrix
    gt: GroundTruth
    intent: IntentDistribution
    behaviors: tuple[str, ...]

    @property
    def session_id(self) -> str:
        return self.record.session_id

    @property
    def n_items(self) -> int:
        return self.scores.n_items


# --------------------------------------------------------------------------
# parsing


def parse_timestamp(raw: str) -> float:
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d", "%Y%m%d"):
        try:
            t = dt.datetime.strptime(raw, fmt)
        except ValueError:
            continue
        return t.replace(tzinfo=dt.timezone.utc).timestamp()
    t = dt.datetime.fromisoformat(raw)  # raises ValueError
    if t.tzinfo is None:
        t = t.replace(tzinfo=dt.timezone.utc)
    return t.timestamp()


def read_interactions(path, scheme: BehaviorScheme) -> list[InteractionEvent]:
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"user_id", "item_id", "category_id", "behavior", "timestamp"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for rowno, row in enumerate(reader, start=2):
            try:
                ts = parse_timestamp(row["timestamp"])
            except ValueError:
                raise ValidationError(f"{path}: row {rowno}: unparseable timestamp {row['timestamp']!r}") from None
            try:
                level = scheme.level(row["behavior"])
                cat = int(row["category_id"])
            except ValueError as exc:
                raise ValidationError(f"{path}: row {rowno}: {exc}") from None
            events.append(
                InteractionEvent(row["user_id"], row["item_id"], cat, level, ts, row.get("visit_id") or None)
            )
    return events


def write_interactions(path, events: Iterable[InteractionEvent], scheme: BehaviorScheme) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_id", "category_id", "behavior", "timestamp"])
        for e in events:
            w.writerow([e.user_id, e.item_id, e.category_id, scheme.name(e.behavior), repr(float(e.timestamp))])


def read_basic_lists(path) -> tuple[dict[tuple[str, str], list[tuple[str, float]]], dict[str, int]]:
    """Load ``basic_lists.jsonl``. Optional per-item ``category_id`` fields are collected too."""
    lists: dict[tuple[str, str], list[tuple[str, float]]] = {}
    categories: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            key = (str(obj["session_id"]), str(obj["model_id"]))
            items = []
            seen = set()
            for it in obj["items"]:
                iid = str(it["item_id"])
                score = float(it["score"])
                if not np.isfinite(score):
                    raise ValidationError(f"{path}: line {lineno}: non-finite score for {iid}")
                if iid in seen:
                    raise ValidationError(f"{path}: line {lineno}: duplicate item {iid}")
                seen.add(iid)
                items.append((iid, score))
                if "category_id" in it:
                    categories[iid] = int(it["category_id"])
            lists[key] = items
    return lists, categories


def write_basic_lists(path, lists: BasicLists, categories: Mapping[str, int] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (sid, mid), items in lists.items():
            entries = []
            for iid, score in items:
                e = {"item_id": iid, "score": float(score)}
                if categories is not None:
                    e["category_id"] = int(categories[iid])
                entries.append(e)
            fh.write(json.dumps({"session_id": sid, "model_id": mid, "items": entries}) + "\n")


# --------------------------------------------------------------------------
# sessions


def filter_min_positive(events: Sequence[InteractionEvent], min_count: int = 3) -> list[InteractionEvent]:
    """Drop users and items with fewer than ``min_count`` positive interactions, to a fixed point."""
    if min_count < 1:
        raise ValidationError("min_count must be >= 1")
    kept = list(events)
    while True:
        users = Counter(e.user_id for e in kept if e.behavior >= 1)
        items = Counter(e.item_id for e in kept if e.behavior >= 1)
        nxt = [e for e in kept if users[e.user_id] >= min_count and items[e.item_id] >= min_count]
        if len(nxt) == len(kept):
            return nxt
        kept = nxt


def _day_key(ts: float) -> str:
    return dt.datetime.fromtimestamp(ts, tz=dt.timezone.utc).strftime("%Y-%m-%d")


def build_sessions(events: Sequence[InteractionEvent], rule: str = "day") -> list[SessionRecord]:
    """Group events into sessions; sessions without a positive interaction are dropped.

    ``rule`` is ``"day"`` (a user's events in one UTC calendar day) or
    ``"visit"`` (events sharing an explicit ``visit_id``).
    """
    if rule not in ("day", "visit"):
        raise ValidationError(f"unknown session rule {rule!r}")
    groups: dict[tuple[str, str], list[InteractionEvent]] = defaultdict(list)
    for e in events:
        if rule == "day":
            key = _day_key(e.timestamp)
        else:
            if e.visit_id is None:
                raise ValidationError(f"visit rule needs visit_id (user {e.user_id})")
            key = e.visit_id
        groups[(e.user_id, key)].append(e)

    sessions = []
    for (user, key), evs in groups.items():
        evs.sort(key=lambda e: (e.timestamp, e.item_id, e.behavior))
        if not any(e.behavior >= 1 for e in evs):
            continue
        cands: dict[str, int] = {}
        for e in evs:
            cands.setdefault(e.item_id, e.category_id)
        sessions.append(
            SessionRecord(
                session_id=f"{user}|{key}",
                user_id=user,
                timestamp=evs[0].timestamp,
                context=ContextFeatures.from_timestamp(evs[0].timestamp),
                candidates=tuple(CandidateItem(i, c) for i, c in cands.items()),
                interactions=tuple((e.item_id, e.behavior) for e in evs),
            )
        )
    sessions.sort(key=lambda s: s.session_id)
    return sessions


def _top_items(items: Sequence[tuple[str, float]], top_m: int) -> list[tuple[str, float]]:
    return sorted(items, key=lambda x: (-x[1], x[0]))[:top_m]


def assemble_candidates(
    session: SessionRecord,
    lists: BasicLists,
    model_ids: Sequence[str],
    item_categories: Mapping[str, int] | None = None,
    top_m: int = 30,
) -> tuple[SessionRecord, ScoreMatrix, GroundTruth]:
    """Union of each model's top-``top_m`` items plus the session's positives.

    Returns the session with its candidates replaced, the raw (not yet
    normalized) score matrix with provenance mask, and the ground truth.
    Unproposed entries hold 0 until :func:`normalize_and_impute`.
    """
    cats = dict(item_categories or {})
    cats.update({c.item_id: c.category_id for c in session.candidates})
    order: list[str] = []
    proposed: list[dict[str, float]] = []
    for mid in model_ids:
        key = (session.session_id, mid)
        if key not in lists:
            raise MissingBasicList(session.session_id, mid)
        top = dict(_top_items(lists[key], top_m))
        proposed.append(top)
        for iid in sorted(top, key=lambda i: (-top[i], i)):
            if iid not in cats:
                raise UnknownItem(f"no category known for item {iid!r}")
        order.extend(sorted(top, key=lambda i: (-top[i], i)))
    for iid, lvl in session.interactions:
        if lvl >= 1:
            order.append(iid)
    seen = set()
    items = [i for i in order if not (i in seen or seen.add(i))]

    values = np.zeros((len(items), len(model_ids)))
    mask = np.zeros_like(values, dtype=bool)
    for k, top in enumerate(proposed):
        for n, iid in enumerate(items):
            if iid in top:
                values[n, k] = top[iid]
                mask[n, k] = True

    levels_by_item = session.item_levels()
    levels = [levels_by_item.get(i, 0) for i in items]
    record = SessionRecord(
        session.session_id,
        session.user_id,
        session.timestamp,
        session.context,
        tuple(CandidateItem(i, cats[i]) for i in items),
        session.interactions,
    )
    return record, ScoreMatrix(values, mask, tuple(model_ids)), GroundTruth.from_levels(levels, items)


def normalize_and_impute(scores: ScoreMatrix) -> ScoreMatrix:
    """Per-column min-max of proposed scores to [0, 1]; unproposed entries become 0."""
    vals = np.zeros_like(scores.values)
    for k in range(scores.n_models):
        m = scores.mask[:, k]
        if not m.any():
            raise ValidationError(f"column {scores.model_ids[k]!r} has no proposed items")
        col = scores.values[m, k]
        lo, hi = col.min(), col.max()
        vals[m, k] = 0.5 if hi == lo else (col - lo) / (hi - lo)
    return ScoreMatrix(vals, scores.mask, scores.model_ids)


def compute_intent_gt(session: SessionRecord, n_categories: int, n_behaviors: int) -> IntentDistribution:
    """Normalized counts of positive interactions per (behavior, category) cell."""
    cats = {c.item_id: c.category_id for c in session.candidates}
    counts = np.zeros(n_categories * n_behaviors)
    for iid, lvl in session.positive_interactions():
        if lvl > n_behaviors:
            raise ValidationError(f"level {lvl} exceeds {n_behaviors} behaviors")
        if iid not in cats:
            raise UnknownItem(f"positive item {iid!r} missing from candidates")
        counts[intent_index(lvl - 1, cats[iid], n_categories)] += 1
    if counts.sum() == 0:
        raise NoPositives(f"session {session.session_id} has no positive interactions")
    return IntentDistribution(counts / counts.sum(), n_categories)


def session_day(ts: float) -> int:
    return int(ts // DAY_SECONDS)


def temporal_split(sessions: Sequence, timestamp=lambda s: s.timestamp):
    """Last 7 days to test, the 3 days before that to validation, the rest to train."""
    if not sessions:
        raise EmptySplit("no sessions to split")
    days = [session_day(timestamp(s)) for s in sessions]
    first, last = min(days), max(days)
    if last - first + 1 < TEST_DAYS + VALIDATION_DAYS + 1:
        raise InsufficientTimespan(f"span of {last - first + 1} days; need at least 11")
    test_start = last - TEST_DAYS + 1
    val_start = test_start - VALIDATION_DAYS
    train, val, test = [], [], []
    for s, d in zip(sessions, days):
        (test if d >= test_start else val if d >= val_start else train).append(s)
    for name, part in (("train", train), ("validation", val), ("test", test)):
        if not part:
            raise EmptySplit(f"{name} split is empty")
    return train, val, test


# --------------------------------------------------------------------------
# sessions.jsonl


def session_to_json(s: EnsembleSession) -> dict:
    r = s.record
    return {
        "session_id": r.session_id,
        "user_id": r.user_id,
        "timestamp": float(r.timestamp),
        "context": {
            "hour_of_day": r.context.hour_of_day,
            "day_of_week": r.context.day_of_week,
            "extra": list(r.context.extra),
        },
        "items": [{"item_id": c.item_id, "category_id": c.category_id} for c in r.candidates],
        "interactions": [[i, lvl] for i, lvl in r.interactions],
        "model_ids": list(s.scores.model_ids),
        "scores": s.scores.values.tolist(),
        "mask": s.scores.mask.astype(int).tolist(),
        "levels": s.gt.levels.tolist(),
        "pi_order": s.gt.pi_order.tolist(),
        "intent": s.intent.probs.tolist(),
        "n_categories": s.intent.n_categories,
        "behaviors": list(s.behaviors),
    }


def session_from_json(obj: Mapping) -> EnsembleSession:
    ctx = obj["context"]
    record = SessionRecord(
        session_id=obj["session_id"],
        user_id=obj["user_id"],
        timestamp=float(obj["timestamp"]),
        context=ContextFeatures(ctx["hour_of_day"], ctx["day_of_week"], tuple(ctx.get("extra", ()))),
        candidates=tuple(CandidateItem(c["item_id"], int(c["category_id"])) for c in obj["items"]),
        interactions=tuple((i, int(lvl)) for i, lvl in obj["interactions"]),
    )
    scores = ScoreMatrix(np.array(obj["scores"], dtype=np.float64), np.array(obj["mask"], dtype=bool), tuple(obj["model_ids"]))
    gt = GroundTruth(np.array(obj["levels"]), np.array(obj["pi_order"]))
    intent = IntentDistribution(np.array(obj["intent"]), int(obj["n_categories"]))
    return EnsembleSession(record, scores, gt, intent, tuple(obj["behaviors"]))


def write_sessions(path, sessions: Iterable[EnsembleSession]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(session_to_json(s)) + "\n")


def read_sessions(path) -> list[EnsembleSession]:
    with open(path, encoding="utf-8") as fh:
        return [session_from_json(json.loads(line)) for line in fh if line.strip()]


def ingest(
    interactions_path,
    basic_lists_path,
    out_path,
    scheme: BehaviorScheme,
    rule: str = "day",
    top_m: int = 30,
    min_positive: int = 3,
) -> list[EnsembleSession]:
    """Full pipeline from the two raw files to ``sessions.jsonl``."""
    events = read_interactions(interactions_path, scheme)
    events = filter_min_positive(events, min_positive)
    lists, list_cats = read_basic_lists(basic_lists_path)
    model_ids = sorted({mid for _, mid in lists})
    if len(model_ids) < 2:
        raise ValidationError("need at least two basic models")

    raw_cats = dict(list_cats)
    raw_cats.update({e.item_id: e.category_id for e in events})
    vocab = {c: i for i, c in enumerate(sorted(set(raw_cats.values())))}
    item_cats = {i: vocab[c] for i, c in raw_cats.items()}
    events = [InteractionEvent(e.user_id, e.item_id, item_cats[e.item_id], e.behavior, e.timestamp, e.visit_id) for e in events]

    out = []
    for session in build_sessions(events, rule):
        record, raw, gt = assemble_candidates(session, lists, model_ids, item_cats, top_m)
        intent = compute_intent_gt(record, len(vocab), scheme.n_behaviors)
        out.append(EnsembleSession(record, normalize_and_impute(raw), gt, intent, scheme.names))
    log.info("ingested %d sessions, %d categories, models %s", len(out), len(vocab), model_ids)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_sessions(out_path, out)
    return out
