import contextlib

import numpy as np
import pytest
import torch

from intent_ensemble.synthetic import SyntheticConfig, write_synthetic

torch.set_num_threads(1)

TINY_SYNTHETIC = dict(n_users=60, n_items=300, sessions_per_user=6.0, span_days=20, pool_size=20, top_m=6)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """A small generated dataset: (directory, sessions.jsonl path, generation report)."""
    out = tmp_path_factory.mktemp("tiny")
    report = write_synthetic(SyntheticConfig(**TINY_SYNTHETIC), seed=3, out_dir=out)
    return out, out / "sessions.jsonl", report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_run_dict(sessions, out_dir, **train):
    """Run-config dict small enough to train in a few seconds."""
    t = {"loss": "bpr", "lr": 0.005, "batch_size": 64, "max_epochs": 3, "patience": 3, "seeds": [0]}
    t.update(train)
    return {
        "data": {"sessions": str(sessions), "out_dir": str(out_dir)},
        "model": {"d_e": 8, "d_int": 4, "heads": 2, "hidden": 8, "history_sessions": 5, "history_items": 10,
                  "context_embed": 4, "intent_embed": 4},
        "train": t,
    }


ACCEPTANCE_LINES = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c:`` records one PASS/FAIL line for acceptance criterion ``n``;
    set ``c.detail`` to the measured values. Any exception inside the block marks it FAIL."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    @contextlib.contextmanager
    def record(number: int, title: str):
        c = _Criterion(number, title)
        try:
            yield c
        except BaseException as exc:
            reason = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            lines.append((number, f"criterion {number:>2} FAIL  {title}: {c.detail} [{reason}]"))
            raise
        lines.append((number, f"criterion {number:>2} PASS  {title}: {c.detail}"))

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
