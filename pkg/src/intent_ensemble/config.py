"""Run configuration: nested dataclasses loaded from YAML with ``section.key=value`` overrides."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from .errors import ValidationError
from .network import ABLATION_FLAGS

LOSS_FAMILIES = ("mse", "bpr", "pl")
DEFAULT_ALPHA = {"mse": 1e-5, "bpr": 1e-5, "pl": 1e-4}
INTENT_MODES = ("learned", "his_avg", "none")
TRAINED_METHODS = ("intel", "awelv")
UNTRAINED_METHODS = ("borda", "rra")


@dataclass
class DataConfig:
    sessions: str = "data/sessions.jsonl"
    out_dir: str = "runs/default"
    relevance_mode: str = "threshold"  # per-behavior relevance: level >= b, or "exact"
    intent_metric: str = "ndcg@10"


@dataclass
class ModelConfig:
    method: str = "intel"  # intel | awelv | borda | rra | single:<k>
    d_e: int = 32
    d_int: int = 16
    heads: int = 2
    layers: int = 1
    weight_head: str = "simplex"
    ablation: list[str] = field(default_factory=list)
    intent_mode: str = "learned"
    hidden: int = 64
    encoder: str = "gru"
    history_sessions: int = 20  # T
    history_items: int = 100
    context_embed: int = 16
    intent_embed: int = 16


@dataclass
class TrainConfig:
    loss: str = "bpr"
    alpha: float | None = None  # None: the loss family's default
    gamma: float = 0.1
    lr: float = 1e-3
    batch_size: int = 512
    eval_batch_size: int = 2048
    max_epochs: int = 100
    patience: int = 10
    seeds: list[int] = field(default_factory=lambda: [0])

    @property
    def alpha_value(self) -> float:
        return DEFAULT_ALPHA[self.loss] if self.alpha is None else float(self.alpha)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        t, m = self.train, self.model
        if t.loss not in LOSS_FAMILIES:
            problems.append(f"train.loss must be one of {LOSS_FAMILIES}")
        if t.alpha is not None and t.alpha < 0:
            problems.append("train.alpha must be >= 0")
        if t.gamma < 0:
            problems.append("train.gamma must be >= 0")
        if t.lr < 0:
            problems.append("train.lr must be >= 0")
        if not t.seeds:
            problems.append("train.seeds needs at least one seed")
        for name in ("batch_size", "eval_batch_size", "max_epochs", "patience"):
            if getattr(t, name) < 1:
                problems.append(f"train.{name} must be >= 1")
        if m.intent_mode not in INTENT_MODES:
            problems.append(f"model.intent_mode must be one of {INTENT_MODES}")
        if m.weight_head not in ("simplex", "unconstrained"):
            problems.append("model.weight_head must be simplex or unconstrained")
        bad = [a for a in m.ablation if a not in ABLATION_FLAGS]
        if bad:
            problems.append(f"model.ablation has unknown flags {bad}")
        if "-I" in m.ablation and "-S" in m.ablation:
            problems.append("model.ablation cannot drop both -I and -S")
        if not (m.method in TRAINED_METHODS or m.method in UNTRAINED_METHODS or single_index(m.method) is not None):
            problems.append(f"model.method {m.method!r} is not intel, awelv, borda, rra or single:<k>")
        if self.data.relevance_mode not in ("threshold", "exact"):
            problems.append("data.relevance_mode must be threshold or exact")
        if problems:
            raise ValidationError("invalid config: " + "; ".join(problems))

    @property
    def trained(self) -> bool:
        return self.model.method in TRAINED_METHODS

    @property
    def effective_intent_mode(self) -> str:
        """The list-level learner and the -Int ablation never see an intent."""
        if self.model.method == "awelv" or "-Int" in self.model.ablation:
            return "none"
        return self.model.intent_mode

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        """Hash of everything that shapes a trained model (not seeds or output paths)."""
        d = self.to_dict()
        d["data"].pop("out_dir")
        d["train"].pop("seeds")
        d["train"].pop("eval_batch_size")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def single_index(method: str) -> int | None:
    """``"single:1"`` -> 1; anything else -> None."""
    if method.startswith("single:"):
        try:
            return int(method.split(":", 1)[1])
        except ValueError:
            return None
    return None


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ValidationError(f"section {prefix or 'root'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in raw.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{prefix}{name}.") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


_SECTIONS = {(RunConfig, "data"): DataConfig, (RunConfig, "model"): ModelConfig, (RunConfig, "train"): TrainConfig}


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """``["train.lr=0.01", "model.ablation=[-Int]"]``; values are parsed as YAML scalars/lists."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {key!r} descends into a non-section")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def config_from_dict(raw: dict[str, Any]) -> RunConfig:
    return _build(RunConfig, raw or {}, "")


def load_config(path=None, overrides: Sequence[str] = ()) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except FileNotFoundError as exc:
            raise ValidationError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ValidationError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(apply_overrides(raw, overrides))


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
