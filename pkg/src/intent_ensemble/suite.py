"""Run named groups of config variants against one prepared dataset.

A suite file maps group names to ``{variant name: [dotted overrides]}``. Every
variant is layered on a base config and written to ``<out_root>/<group>/<name>``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import yaml

from .config import load_config
from .errors import ValidationError
from .trainer import PreparedData, prepare_data, run

log = logging.getLogger(__name__)

HEADLINE = "All-NDCG@3"


@dataclass
class VariantResult:
    group: str
    name: str
    overrides: list[str]
    headline: float
    seconds: float
    out_dir: str


def load_suite(path) -> dict[str, dict[str, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict) or not all(isinstance(v, dict) for v in raw.values()):
        raise ValidationError(f"suite {path} must map group names to variant maps")
    return {g: {str(n): list(o or []) for n, o in variants.items()} for g, variants in raw.items()}


def _dir_name(name: str) -> str:
    return name.replace(":", "_").replace("-", "minus_")


def run_variants(
    base_config,
    suite: dict[str, dict[str, list[str]]],
    out_root,
    groups=None,
    extra_overrides=(),
    data: PreparedData | None = None,
) -> list[VariantResult]:
    """Train and evaluate every variant of the selected groups, sharing one data preparation."""
    groups = list(suite) if groups is None else list(groups)
    unknown = [g for g in groups if g not in suite]
    if unknown:
        raise ValidationError(f"unknown suite groups {unknown}")
    if data is None:
        data = prepare_data(load_config(base_config, list(extra_overrides)))
    results = []
    for group in groups:
        for name, overrides in suite[group].items():
            out_dir = Path(out_root) / group / _dir_name(name)
            cfg = load_config(base_config, [*extra_overrides, *overrides, f"data.out_dir={out_dir}"])
            start = time.perf_counter()
            report = run(cfg, data)
            seconds = time.perf_counter() - start
            result = VariantResult(group, name, list(overrides), report.mean(HEADLINE), seconds, str(out_dir))
            log.info("%s/%s %s=%.4f (%.1fs)", group, name, HEADLINE, result.headline, seconds)
            results.append(result)
    return results


def format_table(results: list[VariantResult]) -> str:
    lines = [f"{'group':<14}{'variant':<10}{HEADLINE:>12}{'seconds':>10}"]
    lines += [f"{r.group:<14}{r.name:<10}{r.headline:>12.4f}{r.seconds:>10.1f}" for r in results]
    return "\n".join(lines)
