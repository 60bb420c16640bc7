import filecmp

import numpy as np
import pytest

from intent_ensemble.errors import ValidationError
from intent_ensemble.synthetic import SyntheticConfig, generate_synthetic, level_probabilities, write_synthetic
from conftest import TINY_SYNTHETIC


def test_same_seed_gives_identical_files(tmp_path):
    cfg = SyntheticConfig(**TINY_SYNTHETIC)
    write_synthetic(cfg, 1, tmp_path / "a")
    write_synthetic(cfg, 1, tmp_path / "b")
    for name in ("interactions.csv", "basic_lists.jsonl", "sessions.jsonl", "generation_report.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_noiseless_scorer_is_the_propensity_without_the_behavior_mix():
    cfg = SyntheticConfig(**{**TINY_SYNTHETIC, "n_users": 5, "noise": (0.0, 0.6)})
    data = generate_synthetic(cfg, 0)
    B, C = cfg.n_behaviors, cfg.n_categories
    for s in data.sessions:
        latent = s.latent_intent.reshape(B, C)
        mix = latent / latent.sum(0, keepdims=True)  # mix(b | c)
        cats = data.item_categories[s.items]
        # the generator guards its logs with + 1e-12, which matters once a mix share is tiny
        expected = s.propensity[:, 0] - np.log(B * mix[0, cats] + 1e-12)
        np.testing.assert_allclose(s.scores[:, 0], expected, atol=1e-9)


def test_generated_data_shapes(tiny_data):
    _, _, report = tiny_data
    assert report["oracle"]["n_sessions"] > 0
    assert set(report["oracle"]["single_all_ndcg@3"]) == {"m0_click", "m1_buy"}


def test_level_probabilities_are_distributions():
    rng = np.random.default_rng(0)
    p = level_probabilities(rng.normal(size=(20, 3)))
    assert p.shape == (20, 4)
    np.testing.assert_allclose(p.sum(1), 1.0)
    assert np.all(p >= 0)


@pytest.mark.parametrize(
    "kw",
    [{"n_users": 0}, {"span_days": 5}, {"intent_drift": 2.0}, {"noise": (0.1, 0.2, 0.3)}, {"base_logits": (0.0,)}, {"pool_size": 10**6}],
)
def test_invalid_configs(kw):
    with pytest.raises(ValidationError):
        SyntheticConfig(**kw)
