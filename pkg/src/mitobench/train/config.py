"""Training configuration and the structured config file loader."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from pathlib import Path

import yaml

from mitobench.adapt.lora import LoraConfig
from mitobench.errors import ValidationError
from mitobench.ingest.augment import AugmentPolicy


@dataclass(frozen=True)
class AdamParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class OneCycleParams:
    kind: str = "ONE_CYCLE"
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if self.kind != "ONE_CYCLE":
            raise ValidationError(f"schedule kind: unsupported {self.kind!r}")
        if not 0.0 <= self.pct_start < 1.0:
            raise ValidationError(f"pct_start: must be in [0, 1), got {self.pct_start}")
        if self.div_factor <= 0 or self.final_div <= 0:
            raise ValidationError("div_factor/final_div must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    pseudo_epochs: int = 100
    epoch_length: int = 1280
    optimizer: AdamParams = field(default_factory=AdamParams)
    max_lr: float = 1e-4
    schedule: OneCycleParams = field(default_factory=OneCycleParams)
    loss: str = "bce"
    seed: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epoch_length < 1 or self.pseudo_epochs < 1:
            raise ValidationError("batch_size/epoch_length/pseudo_epochs must be >= 1")
        if self.epoch_length % self.batch_size != 0:
            raise ValidationError(
                f"epoch_length {self.epoch_length} not divisible by batch_size {self.batch_size}"
            )
        if self.max_lr <= 0:
            raise ValidationError(f"max_lr must be > 0, got {self.max_lr}")
        if self.loss != "bce":
            raise ValidationError(f"loss: unsupported {self.loss!r}")

    @property
    def steps_per_epoch(self) -> int:
        return self.epoch_length // self.batch_size

    @property
    def total_steps(self) -> int:
        return self.pseudo_epochs * self.steps_per_epoch


@dataclass(frozen=True)
class SamplerPolicy:
    """Per-draw source probabilities for pseudo-epoch sampling."""

    p_mitotic: float = 0.5
    p_hard_negative: float = 0.25
    p_random: float = 0.25

    def __post_init__(self):
        probs = (self.p_mitotic, self.p_hard_negative, self.p_random)
        if any(p < 0 for p in probs):
            raise ValidationError(f"sampler probabilities must be nonnegative, got {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValidationError(f"sampler probabilities must sum to 1, got {sum(probs)}")


@dataclass(frozen=True)
class RunSettings:
    train: TrainConfig = field(default_factory=TrainConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    sampler: SamplerPolicy = field(default_factory=SamplerPolicy)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_digest(obj) -> str:
    """Reproducible digest of any config-like object."""
    return hashlib.sha256(
        json.dumps(_jsonable(obj), sort_keys=True).encode("utf-8")
    ).hexdigest()


def _build(cls, data: dict, nested=()):
    unknown = set(data) - {f for f in cls.__dataclass_fields__}
    if unknown:
        raise ValidationError(f"{cls.__name__}: unknown config keys {sorted(unknown)}")
    kwargs = dict(data)
    for key, sub_cls in nested:
        if key in kwargs and isinstance(kwargs[key], dict):
            kwargs[key] = _build(sub_cls, kwargs[key])
    return cls(**kwargs)


def load_run_config(path: str | Path | None) -> RunSettings:
    """Parse a YAML/JSON config file with train/lora/sampler/augment
    sections; keys match the config dataclass field names exactly."""
    if path is None:
        return RunSettings()
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: config root must be a mapping")
    unknown = set(raw) - {"train", "lora", "sampler", "augment"}
    if unknown:
        raise ValidationError(f"{path}: unknown config sections {sorted(unknown)}")
    lora_raw = dict(raw.get("lora", {}))
    if "targets" in lora_raw:
        lora_raw["targets"] = tuple(lora_raw["targets"])
    if "blur_sigma" in raw.get("augment", {}):
        raw["augment"]["blur_sigma"] = tuple(raw["augment"]["blur_sigma"])
    return RunSettings(
        train=_build(
            TrainConfig,
            raw.get("train", {}),
            nested=[("optimizer", AdamParams), ("schedule", OneCycleParams)],
        ),
        lora=_build(LoraConfig, lora_raw),
        sampler=_build(SamplerPolicy, raw.get("sampler", {})),
        augment=_build(AugmentPolicy, raw.get("augment", {})),
    )
