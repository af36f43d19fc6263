"""Team player effects in online team games: features, clustered logit, residual index."""

from .data import MatchRecord, PlayerObservation, SchemaError, parse_matches, split_dataset
from .features import DeltaScaler, build_feature_table
from .glm import ClusteredLogisticRegression, FitError, marginal_effects_at_mean
from .simgen import SyntheticConfig, run_world
from .tp import ResidualLedger, TeamPlayerEffect, compute_residuals

__version__ = "0.1.0"

__all__ = [
    "MatchRecord", "PlayerObservation", "SchemaError", "parse_matches", "split_dataset",
    "DeltaScaler", "build_feature_table", "ClusteredLogisticRegression", "FitError",
    "marginal_effects_at_mean", "SyntheticConfig", "run_world", "ResidualLedger",
    "TeamPlayerEffect", "compute_residuals",
]
