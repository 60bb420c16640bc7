"""Intent-conditioned ensembling of multi-behavior recommendation score lists."""

from .ambiguity import AmbiguityReport, bpr_ambiguity, intent_kl, joint_loss, mse_ambiguity, pl_ambiguity
from .baselines import aggregate_scores, borda, rra, single_model
from .config import RunConfig, load_config
from .errors import IntentEnsembleError, ValidationError
from .losses import bpr_loss, mse_loss, pl_loss, sample_bpr_pairs
from .metrics import intent_metrics, ndcg_at_k
from .network import Ablation, EnsembleNet, NetworkConfig
from .intent import IntentPredictor, PredictorConfig, historical_average_intent
from .synthetic import SyntheticConfig, generate_synthetic, write_synthetic
from .theorems import run_trials, verify_listwise, verify_pairwise, verify_pointwise
from .types import (
    BehaviorScheme,
    EnsembleScores,
    GroundTruth,
    IntentDistribution,
    ScoreMatrix,
    WeightMatrix,
)

__version__ = "0.1.0"

__all__ = [
    "Ablation",
    "AmbiguityReport",
    "BehaviorScheme",
    "EnsembleNet",
    "EnsembleScores",
    "GroundTruth",
    "IntentDistribution",
    "IntentEnsembleError",
    "IntentPredictor",
    "NetworkConfig",
    "PredictorConfig",
    "RunConfig",
    "ScoreMatrix",
    "SyntheticConfig",
    "ValidationError",
    "WeightMatrix",
    "aggregate_scores",
    "borda",
    "bpr_ambiguity",
    "bpr_loss",
    "generate_synthetic",
    "historical_average_intent",
    "intent_kl",
    "intent_metrics",
    "joint_loss",
    "load_config",
    "mse_ambiguity",
    "mse_loss",
    "ndcg_at_k",
    "pl_ambiguity",
    "pl_loss",
    "rra",
    "run_trials",
    "sample_bpr_pairs",
    "single_model",
    "verify_listwise",
    "verify_pairwise",
    "verify_pointwise",
    "write_synthetic",
]
