from mitobench.train.config import (
    AdamParams,
    OneCycleParams,
    RunSettings,
    SamplerPolicy,
    TrainConfig,
    config_digest,
    load_run_config,
)
from mitobench.train.loop import (
    Checkpoint,
    FeatureCache,
    FoldData,
    TrainResult,
    evaluate_model,
    load_train_checkpoint,
    predict_scores,
    save_trace,
    save_train_checkpoint,
    trace_digest,
    train,
)
from mitobench.train.losses import bce_loss
from mitobench.train.sampler import (
    SOURCE_HARD_NEGATIVE,
    SOURCE_MITOTIC,
    SOURCE_RANDOM,
    BalancedSampler,
    Batch,
)
from mitobench.train.schedule import one_cycle_lr

__all__ = [
    "AdamParams",
    "BalancedSampler",
    "Batch",
    "Checkpoint",
    "FeatureCache",
    "FoldData",
    "OneCycleParams",
    "RunSettings",
    "SOURCE_HARD_NEGATIVE",
    "SOURCE_MITOTIC",
    "SOURCE_RANDOM",
    "SamplerPolicy",
    "TrainConfig",
    "TrainResult",
    "bce_loss",
    "config_digest",
    "evaluate_model",
    "load_run_config",
    "load_train_checkpoint",
    "one_cycle_lr",
    "predict_scores",
    "save_trace",
    "save_train_checkpoint",
    "trace_digest",
    "train",
]
