from mitobench.adapt.lora import (
    ALL_TARGETS,
    LoraConfig,
    LoraLayer,
    LoraTarget,
    lora_forward,
    lora_trainable_count,
)
from mitobench.adapt.model import (
    AdaptedModel,
    AdaptMode,
    full_finetune,
    inject_lora,
    linear_probe,
    load_adapter_checkpoint,
    merge_lora,
    parse_mode,
    save_adapter_checkpoint,
)
from mitobench.adapt.probe import FitConfig, ProbeHead, fit_probe, probe_predict

__all__ = [
    "ALL_TARGETS",
    "AdaptMode",
    "AdaptedModel",
    "FitConfig",
    "LoraConfig",
    "LoraLayer",
    "LoraTarget",
    "ProbeHead",
    "fit_probe",
    "full_finetune",
    "inject_lora",
    "linear_probe",
    "load_adapter_checkpoint",
    "lora_forward",
    "lora_trainable_count",
    "merge_lora",
    "parse_mode",
    "probe_predict",
    "save_adapter_checkpoint",
]
