"""Next-purchase item recommendation pipeline for game telemetry."""

__version__ = "0.1.0"

from .data_model import (
    DailyRecord,
    ItemCatalog,
    PlayerTimeSeries,
    TelemetryError,
    ingest_logs,
    next_purchase_after,
    truncate,
    write_logs,
)
from .ert import ErtEnsemble, ErtParams, ModelError, train_ert
from .evaluation import EvalConfig, EvaluationReport, evaluate, top_k
from .features import FeatureConfig, FeatureVector, default_feature_config, vectorize
from .mlp import MlpModel, MlpParams, train_mlp
from .sampling import SamplerConfig, TrainingSample, draw_samples, eligible_cutoffs
from .synth import SynthConfig, bayes_top1_accuracy, generate

__all__ = [
    "DailyRecord",
    "ItemCatalog",
    "PlayerTimeSeries",
    "TelemetryError",
    "ingest_logs",
    "next_purchase_after",
    "truncate",
    "write_logs",
    "ErtEnsemble",
    "ErtParams",
    "ModelError",
    "train_ert",
    "EvalConfig",
    "EvaluationReport",
    "evaluate",
    "top_k",
    "FeatureConfig",
    "FeatureVector",
    "default_feature_config",
    "vectorize",
    "MlpModel",
    "MlpParams",
    "train_mlp",
    "SamplerConfig",
    "TrainingSample",
    "draw_samples",
    "eligible_cutoffs",
    "SynthConfig",
    "bayes_top1_accuracy",
    "generate",
]
