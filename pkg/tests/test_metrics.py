import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intent_ensemble.errors import ValidationError
from intent_ensemble.metrics import (
    MetricsReport,
    intent_metrics,
    intent_ndcg,
    macro_f1,
    ndcg_at_k,
    per_objective_relevance,
    session_metrics,
)
from oracles import brute_force_ndcg

BEHAVIORS = ("examine", "click", "favorite", "buy")


def test_ndcg_examples():
    assert ndcg_at_k([0, 1, 2], [3, 2, 1], 3) == 1.0
    want = (1 + 3 / math.log2(3) + 7 / 2) / (7 + 3 / math.log2(3) + 1 / 2)
    assert ndcg_at_k([2, 1, 0], [3, 2, 1], 3) == pytest.approx(want, abs=1e-12)
    assert ndcg_at_k([2, 1, 0], [3, 2, 1], 3) == pytest.approx(0.68061, abs=1e-5)
    assert ndcg_at_k([0, 1], [0, 0], 2) == 0.0
    with pytest.raises(ValidationError):
        ndcg_at_k([0], [1], 0)
    with pytest.raises(ValidationError):
        ndcg_at_k([0, 1], [1], 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=7), st.integers(1, 8), st.randoms(use_true_random=False))
def test_ndcg_matches_brute_force(rel, k, rnd):
    ranking = list(range(len(rel)))
    rnd.shuffle(ranking)
    assert ndcg_at_k(ranking, rel, k) == pytest.approx(brute_force_ndcg(ranking, rel, k), abs=1e-12)
    ideal = sorted(range(len(rel)), key=lambda i: -rel[i])
    assert ndcg_at_k(ideal, rel, k) == (1.0 if any(rel) else 0.0)


def test_relevance_threshold_and_exact():
    assert per_objective_relevance([3, 1, 0], "click", BEHAVIORS).tolist() == [1, 1, 0]
    assert per_objective_relevance([3, 1, 0], "buy", BEHAVIORS).tolist() == [1, 0, 0]
    assert per_objective_relevance([3, 1, 0], "all", BEHAVIORS).tolist() == [3, 1, 0]
    assert per_objective_relevance([3, 1, 0], "click", BEHAVIORS, mode="exact").tolist() == [0, 1, 0]
    with pytest.raises(ValidationError):
        per_objective_relevance([1], "share", BEHAVIORS)


def test_intent_ndcg_tie_order():
    assert intent_ndcg([0.5, 0.5], [0.5, 0.5]) == 1.0
    uniform = np.full(12, 1 / 12)
    hot0, hot11 = np.eye(12)[0], np.eye(12)[11]
    assert intent_metrics(hot0, uniform) == 1.0
    # the hot cell sits beyond the cutoff of 10 under index tie-breaking
    assert intent_metrics(hot11, uniform) == 0.0
    assert intent_metrics(hot11, uniform, mode="ndcg@12") == pytest.approx(1 / math.log2(13))
    with pytest.raises(ValidationError):
        intent_metrics(hot0, uniform[:5])


def test_macro_f1():
    t = np.array([[0.5, 0.5, 0.0], [1.0, 0.0, 0.0]])
    assert macro_f1(t, t) == 1.0
    assert macro_f1(t, np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])) == 0.0


def test_session_metrics_names():
    m = session_metrics([0, 1, 2], [3, 1, 0], BEHAVIORS, ["all", "buy"], ks=(3,))
    assert set(m) == {"All-NDCG@3", "Buy-NDCG@3"}
    assert m["All-NDCG@3"] == 1.0


def test_report_aggregation_and_json(tmp_path):
    rep = MetricsReport.aggregate([{"A": 0.5, "B": 1.0}] * 5, n_sessions=3, meta={"method": "x"})
    assert rep.entries["A"]["std"] == 0.0
    assert rep.mean("B") == 1.0
    rep.write(tmp_path / "m.json")
    again = MetricsReport.read(tmp_path / "m.json")
    assert again.entries == rep.entries and again.meta == rep.meta
    assert (tmp_path / "m.json").read_text() == rep.to_json() + "\n"
