"""Training, checkpointing and evaluation of the ensemble and intent modules."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .ambiguity import bpr_ambiguity, intent_kl, joint_loss, mse_ambiguity, pl_ambiguity
from .baselines import aggregate_scores
from .config import RunConfig, dump_config
from .dataset import Batch, SessionTensors, build_tensors, make_batch, sample_pairs
from .errors import (
    FingerprintMismatch,
    NonFiniteLoss,
    PreconditionViolated,
    TrainingDiverged,
    ValidationError,
)
from .intent import PredictorConfig, IntentPredictor
from .losses import bpr_loss, mse_loss, pl_loss
from .metrics import MetricsReport, evaluate_run, intent_metrics, ndcg_at_k
from .network import Ablation, EnsembleNet, NetworkConfig
from .pipeline import EnsembleSession, session_from_json, temporal_split
from .types import SIMPLEX_TOL

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "intent-ensemble-checkpoint"
CHECKPOINT_VERSION = 1
HEADLINE = "All-NDCG@3"


def num_workers() -> int:
    raw = os.environ.get("INTEL_NUM_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValidationError(f"INTEL_NUM_WORKERS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ValidationError("INTEL_NUM_WORKERS must be >= 1")
    return n


def load_sessions(path, workers: int | None = None) -> list[EnsembleSession]:
    """Read ``sessions.jsonl``; parsing fans out over ``INTEL_NUM_WORKERS`` threads, order kept."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise ValidationError(f"sessions file not found: {path}") from exc
    parse = lambda line: session_from_json(json.loads(line))
    workers = workers or num_workers()
    if workers == 1:
        return [parse(line) for line in lines]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(parse, lines, chunksize=256))


@dataclass
class PreparedData:
    sessions: list[EnsembleSession]
    splits: dict[str, list[int]]
    tensors: dict[str, SessionTensors]
    n_models: int
    n_categories: int
    n_intents: int
    behaviors: tuple[str, ...]

    def split_sessions(self, name: str) -> list[EnsembleSession]:
        return [self.sessions[i] for i in self.splits[name]]


def prepare_data(cfg: RunConfig, sessions: list[EnsembleSession] | None = None) -> PreparedData:
    if sessions is None:
        sessions = load_sessions(cfg.data.sessions)
    if not sessions:
        raise ValidationError("no sessions")
    order = sorted(range(len(sessions)), key=lambda i: sessions[i].session_id)
    sessions = [sessions[i] for i in order]
    index = {id(s): i for i, s in enumerate(sessions)}
    train, val, test = temporal_split(sessions, timestamp=lambda s: s.record.timestamp)
    splits = {name: [index[id(s)] for s in part] for name, part in (("train", train), ("val", val), ("test", test))}
    m = cfg.model
    tensors = {
        name: build_tensors(sessions, idx, m.history_sessions, m.history_items, len(sessions[0].record.context.extra))
        for name, idx in splits.items()
    }
    first = sessions[0]
    return PreparedData(
        sessions=sessions,
        splits=splits,
        tensors=tensors,
        n_models=first.scores.n_models,
        n_categories=first.intent.n_categories,
        n_intents=first.intent.dim,
        behaviors=tuple(first.behaviors),
    )


# --------------------------------------------------------------------------
# models


def build_models(cfg: RunConfig, data: PreparedData) -> tuple[EnsembleNet, IntentPredictor | None]:
    m = cfg.model
    net = EnsembleNet(
        NetworkConfig(
            n_models=data.n_models,
            n_categories=data.n_categories,
            n_intents=data.n_intents,
            d_e=m.d_e,
            d_int=m.d_int,
            heads=m.heads,
            layers=m.layers,
            weight_head=m.weight_head,
            list_level=m.method == "awelv",
        ),
        Ablation.from_names(m.ablation),
    )
    predictor = None
    if cfg.effective_intent_mode == "learned":
        extra = len(data.sessions[0].record.context.extra)
        predictor = IntentPredictor(
            PredictorConfig(
                n_intents=data.n_intents,
                extra_dim=extra,
                context_embed=m.context_embed,
                intent_embed=m.intent_embed,
                hidden=m.hidden,
                encoder=m.encoder,
                heads=m.heads,
                max_sessions=m.history_sessions,
                max_items=m.history_items,
            )
        )
    return net, predictor


def predict_intent(predictor: IntentPredictor | None, batch: Batch, mode: str):
    if mode == "learned":
        return predictor(batch.context, batch.hist_intent, batch.hist_context, batch.hist_len, batch.item_cells, batch.item_len)
    if mode == "his_avg":
        return batch.his_avg
    return None


@dataclass
class StepOutput:
    weights: torch.Tensor
    ens: torch.Tensor
    intent: torch.Tensor | None
    l_ens: torch.Tensor
    ambiguity: torch.Tensor
    l_int: torch.Tensor
    joint: torch.Tensor


def compute_losses(cfg: RunConfig, net, predictor, batch: Batch) -> StepOutput:
    """Forward one batch and return the batch-mean loss components."""
    mode = cfg.effective_intent_mode
    intent = predict_intent(predictor, batch, mode)
    weights, ens = net(batch.scores, batch.mask, batch.categories, batch.valid, intent)
    loss = cfg.train.loss
    if loss == "mse":
        l_ens = mse_loss(batch.levels, ens, batch.valid)
        amb = mse_ambiguity(batch.scores, ens, weights, batch.valid).weighted_total
    elif loss == "bpr":
        l_ens = bpr_loss(ens, batch.pos, batch.neg, batch.pair_valid)
        amb = bpr_ambiguity(batch.scores, ens, weights, batch.pos, batch.neg, batch.pair_valid).weighted_total
    else:
        l_ens = pl_loss(ens, batch.order, batch.order_valid)
        amb = pl_ambiguity(batch.scores, ens, weights, batch.order, batch.order_valid).weighted_total
    if mode == "learned":
        l_int = intent_kl(batch.intent, intent).mean()
    else:
        l_int = ens.new_zeros(())
    l_ens, amb = l_ens.mean(), amb.mean()
    joint = joint_loss(l_ens, amb, l_int, cfg.train.alpha_value, cfg.train.gamma)
    return StepOutput(weights, ens, intent, l_ens, amb, l_int, joint)


@dataclass
class Predictions:
    """Per-session outputs over one split, in split order."""

    ens: list[np.ndarray]
    weights: list[np.ndarray]
    intents: np.ndarray | None


def predict(cfg: RunConfig, net, predictor, data: SessionTensors) -> Predictions:
    net.eval()
    if predictor is not None:
        predictor.eval()
    ens_out, w_out, intents = [], [], []
    mode = cfg.effective_intent_mode
    with torch.no_grad():
        for start in range(0, len(data), cfg.train.eval_batch_size):
            rows = np.arange(start, min(start + cfg.train.eval_batch_size, len(data)))
            b = make_batch(data, rows)
            intent = predict_intent(predictor, b, mode)
            w, e = net(b.scores, b.mask, b.categories, b.valid, intent)
            for j, r in enumerate(rows):
                n = data.n_items[r]
                ens_out.append(e[j, :n].double().numpy())
                w_out.append(w[j, :n].double().numpy())
            if intent is not None:
                intents.append(intent.double().numpy())
    net.train()
    if predictor is not None:
        predictor.train()
    return Predictions(ens_out, w_out, np.concatenate(intents) if intents else None)


def rankings_from_scores(data: SessionTensors, ens: list[np.ndarray]) -> dict[str, np.ndarray]:
    """Descending ensemble score, ties by ascending item id."""
    return {
        sid: np.lexsort((data.tie[r, : data.n_items[r]], -ens[r])) for r, sid in enumerate(data.session_ids)
    }


def headline(data: SessionTensors, rankings: dict[str, np.ndarray]) -> float:
    vals = [
        ndcg_at_k(rankings[sid], data.levels[r, : data.n_items[r]], 3) for r, sid in enumerate(data.session_ids)
    ]
    return float(np.mean(vals))


def check_simplex(weights: list[np.ndarray], tol: float = SIMPLEX_TOL) -> None:
    for w in weights:
        if np.any(w < -tol) or np.any(np.abs(w.sum(-1) - 1) > tol):
            raise PreconditionViolated("weight row off the simplex")


# --------------------------------------------------------------------------
# checkpoints


def seed_dir(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.data.out_dir) / f"seed_{seed}"


def save_checkpoint(path, cfg: RunConfig, seed: int, epoch: int, net, predictor) -> None:
    """Atomic write: a temp file next to ``path`` is renamed over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": cfg.fingerprint(),
        "seed": seed,
        "epoch": epoch,
        "network": net.state_dict(),
        "predictor": None if predictor is None else predictor.state_dict(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path, cfg: RunConfig, data: PreparedData):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as exc:
        raise ValidationError(f"checkpoint not found: {path}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    if payload["fingerprint"] != cfg.fingerprint():
        raise FingerprintMismatch(f"checkpoint {path} was trained with config {payload['fingerprint']}, not {cfg.fingerprint()}")
    net, predictor = build_models(cfg, data)
    net.load_state_dict(payload["network"])
    if predictor is not None:
        predictor.load_state_dict(payload["predictor"])
    return net, predictor, payload


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    seed: int
    best_epoch: int
    best_val: float
    checkpoint: Path
    log: list[dict] = field(default_factory=list)


def _state(module):
    return None if module is None else {k: v.detach().clone() for k, v in module.state_dict().items()}


def train_seed(cfg: RunConfig, data: PreparedData, seed: int) -> TrainResult:
    if not cfg.trained:
        raise ValidationError(f"method {cfg.model.method!r} has nothing to train")
    torch.set_num_threads(1)
    torch.manual_seed(seed)
    net, predictor = build_models(cfg, data)
    params = list(net.parameters()) + ([] if predictor is None else list(predictor.parameters()))
    opt = torch.optim.Adam(params, lr=cfg.train.lr)
    out = seed_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.pt"
    train, val = data.tensors["train"], data.tensors["val"]

    best = (-np.inf, 0, _state(net), _state(predictor))
    rows_log = []
    stale = 0
    for epoch in range(1, cfg.train.max_epochs + 1):
        rng = np.random.default_rng([seed, epoch])
        pairs = sample_pairs(train, rng) if cfg.train.loss == "bpr" else None
        perm = rng.permutation(len(train))
        sums = dict(l_ens=0.0, ambiguity=0.0, l_int=0.0, joint=0.0)
        n_batches = 0
        for start in range(0, len(perm), cfg.train.batch_size):
            batch = make_batch(train, perm[start : start + cfg.train.batch_size], pairs=pairs)
            try:
                step = compute_losses(cfg, net, predictor, batch)
            except NonFiniteLoss as exc:
                _restore(net, predictor, best)
                save_checkpoint(ckpt, cfg, seed, best[1], net, predictor)
                raise TrainingDiverged(f"seed {seed} epoch {epoch}: {exc}; kept epoch {best[1]}") from exc
            opt.zero_grad()
            step.joint.backward()
            opt.step()
            for k in sums:
                sums[k] += float(getattr(step, k).detach())
            n_batches += 1

        preds = predict(cfg, net, predictor, val)
        if cfg.model.weight_head == "simplex":
            check_simplex(preds.weights)
        val_metric = headline(val, rankings_from_scores(val, preds.ens))
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}, "val": {HEADLINE: val_metric}}
        rows_log.append(row)
        log.info("seed %d epoch %d joint %.5f val %s %.4f", seed, epoch, row["joint"], HEADLINE, val_metric)
        if val_metric > best[0]:
            best = (val_metric, epoch, _state(net), _state(predictor))
            stale = 0
        else:
            stale += 1
            if stale >= cfg.train.patience:
                break

    _restore(net, predictor, best)
    save_checkpoint(ckpt, cfg, seed, best[1], net, predictor)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for row in rows_log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return TrainResult(seed, best[1], float(best[0]), ckpt, rows_log)


def _restore(net, predictor, best):
    net.load_state_dict(best[2])
    if predictor is not None and best[3] is not None:
        predictor.load_state_dict(best[3])


def train(cfg: RunConfig, data: PreparedData | None = None) -> list[TrainResult]:
    data = data or prepare_data(cfg)
    Path(cfg.data.out_dir).mkdir(parents=True, exist_ok=True)
    dump_config(cfg, Path(cfg.data.out_dir) / "config.yaml")
    return [train_seed(cfg, data, s) for s in cfg.train.seeds]


# --------------------------------------------------------------------------
# evaluation


def baseline_rankings(cfg: RunConfig, data: PreparedData, split: str = "test") -> dict[str, np.ndarray]:
    return {
        s.session_id: aggregate_scores(s.scores, cfg.model.method, s.record.item_ids)
        for s in data.split_sessions(split)
    }


def run_meta(cfg: RunConfig) -> dict:
    return {
        "method": cfg.model.method,
        "loss": cfg.train.loss if cfg.trained else None,
        "intent_mode": cfg.effective_intent_mode if cfg.trained else None,
        "ablation": list(cfg.model.ablation),
        "weight_head": cfg.model.weight_head if cfg.trained else None,
        "fingerprint": cfg.fingerprint(),
        "seeds": list(cfg.train.seeds) if cfg.trained else [],
    }


def evaluate_seed(cfg: RunConfig, data: PreparedData, net, predictor, split: str = "test") -> tuple[dict, Predictions]:
    tensors = data.tensors[split]
    preds = predict(cfg, net, predictor, tensors)
    if cfg.model.weight_head == "simplex":
        check_simplex(preds.weights)
    rankings = rankings_from_scores(tensors, preds.ens)
    metrics = evaluate_run(rankings, data.split_sessions(split), mode=cfg.data.relevance_mode)
    if preds.intents is not None:
        name = "Intent-" + cfg.data.intent_metric.replace("ndcg", "NDCG")
        metrics[name] = intent_metrics(tensors.intent, preds.intents, cfg.data.intent_metric)
    return metrics, preds


def evaluate(cfg: RunConfig, data: PreparedData | None = None, split: str = "test", write: bool = True) -> MetricsReport:
    """Metrics over ``split`` aggregated across seeds; writes ``metrics.json`` in the run directory."""
    data = data or prepare_data(cfg)
    n = len(data.splits[split])
    if cfg.trained:
        per_seed = []
        for seed in cfg.train.seeds:
            net, predictor, _ = load_checkpoint(seed_dir(cfg, seed) / "checkpoint.pt", cfg, data)
            per_seed.append(evaluate_seed(cfg, data, net, predictor, split)[0])
    else:
        rankings = baseline_rankings(cfg, data, split)
        per_seed = [evaluate_run(rankings, data.split_sessions(split), mode=cfg.data.relevance_mode)]
    report = MetricsReport.aggregate(per_seed, n, run_meta(cfg))
    if write:
        Path(cfg.data.out_dir).mkdir(parents=True, exist_ok=True)
        report.write(Path(cfg.data.out_dir) / "metrics.json")
    return report


def run(cfg: RunConfig, data: PreparedData | None = None) -> MetricsReport:
    """Train (when the method is trainable) and evaluate on the test split."""
    data = data or prepare_data(cfg)
    if cfg.trained:
        train(cfg, data)
    return evaluate(cfg, data)
