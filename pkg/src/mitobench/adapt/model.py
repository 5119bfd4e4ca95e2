"""Adaptation strategies over a registered backbone.

Exactly one of three trainable sets exists per mode:
LINEAR_PROBE -> {head}, LORA -> {head, adapter A/B factors},
FULL_FINETUNE -> {head, all backbone weights}.
"""

from __future__ import annotations

from dataclasses import asdict
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn

from mitobench.adapt.lora import LoraConfig, LoraLayer, attach_adapters, merge_adapters
from mitobench.adapt.probe import ProbeHead
from mitobench.backbone.weights import load_archive, save_archive
from mitobench.errors import UnsupportedModeError, ValidationError


class AdaptMode(Enum):
    LINEAR_PROBE = "LINEAR_PROBE"
    LORA = "LORA"
    FULL_FINETUNE = "FULL_FINETUNE"


_CLI_MODES = {"probe": AdaptMode.LINEAR_PROBE, "lora": AdaptMode.LORA, "full": AdaptMode.FULL_FINETUNE}


def parse_mode(name: str) -> AdaptMode:
    key = str(name).lower()
    if key in _CLI_MODES:
        return _CLI_MODES[key]
    try:
        return AdaptMode(str(name).upper())
    except ValueError:
        raise ValidationError(f"unknown adaptation mode {name!r}") from None


class AdaptedModel(nn.Module):
    """Backbone + head under one adaptation mode."""

    def __init__(
        self,
        backbone: nn.Module,
        mode: AdaptMode,
        head: ProbeHead,
        adapters: dict[str, LoraLayer] | None = None,
        lora_config: LoraConfig | None = None,
    ):
        super().__init__()
        feature_dim = backbone.spec.feature_dim
        if head.in_features != feature_dim:
            raise ValidationError(
                f"head input dim {head.in_features} != backbone feature_dim {feature_dim}"
            )
        self.backbone = backbone
        self.mode = mode
        self.head = head
        self.adapters = adapters or {}
        self.lora_config = lora_config
        self.merged = False
        self.eval()

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        if self.mode is AdaptMode.LINEAR_PROBE:
            with torch.no_grad():
                return self.backbone.embed(images)
        return self.backbone.embed(images)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(images))

    def positive_probability(self, images: torch.Tensor) -> torch.Tensor:
        return self.head.positive_probability(self.embed(images))

    def trainable_tensors(self) -> dict[str, torch.Tensor]:
        return {name: p for name, p in self.named_parameters() if p.requires_grad}

    def trainable_parameter_count(self) -> int:
        return sum(p.numel() for p in self.trainable_tensors().values())


def _make_head(backbone: nn.Module, head: ProbeHead | None, head_bias: bool) -> ProbeHead:
    if head is None:
        head = ProbeHead(backbone.spec.feature_dim, classes=2, bias=head_bias)
    for p in head.parameters():
        p.requires_grad_(True)
    return head


def linear_probe(backbone: nn.Module, head: ProbeHead | None = None, head_bias: bool = False) -> AdaptedModel:
    """Frozen backbone, trainable linear head."""
    for p in backbone.parameters():
        p.requires_grad_(False)
    return AdaptedModel(backbone, AdaptMode.LINEAR_PROBE, _make_head(backbone, head, head_bias))


def inject_lora(
    backbone: nn.Module,
    config: LoraConfig,
    head: ProbeHead | None = None,
    head_bias: bool = False,
) -> AdaptedModel:
    """Wrap every targeted weight in every block with a low-rank adapter.

    Base weights stay bit-identical and frozen; only the A/B factors and
    the head are trainable. The fresh model computes exactly the frozen
    backbone's function because every B starts at zero.
    """
    for p in backbone.parameters():
        p.requires_grad_(False)
    adapters = attach_adapters(backbone, config)
    return AdaptedModel(
        backbone,
        AdaptMode.LORA,
        _make_head(backbone, head, head_bias),
        adapters=adapters,
        lora_config=config,
    )


def full_finetune(backbone: nn.Module, head: ProbeHead | None = None, head_bias: bool = False) -> AdaptedModel:
    """Every backbone weight trainable alongside the head."""
    for p in backbone.parameters():
        p.requires_grad_(True)
    return AdaptedModel(backbone, AdaptMode.FULL_FINETUNE, _make_head(backbone, head, head_bias))


def merge_lora(model: AdaptedModel) -> nn.Module:
    """Fold adapters into base weights; returns the plain backbone.

    Requires LORA mode and inference mode; errors on a second call.
    """
    if model.mode is not AdaptMode.LORA:
        raise UnsupportedModeError(f"merge_lora requires LORA mode, got {model.mode.value}")
    if model.merged or not model.adapters:
        raise UnsupportedModeError("adapters already merged")
    if model.training:
        raise UnsupportedModeError("merge_lora requires inference mode")
    merge_adapters(model.backbone, model.adapters)
    model.adapters = {}
    model.merged = True
    return model.backbone


def save_adapter_checkpoint(model: AdaptedModel, path: str | Path) -> None:
    """Portable checkpoint: adapter factors, scale, config, and head only."""
    tensors: dict[str, np.ndarray] = {}
    for target_path, layer in model.adapters.items():
        tensors[f"adapter.{target_path}.A"] = layer.A.detach().cpu().numpy()
        tensors[f"adapter.{target_path}.B"] = layer.B.detach().cpu().numpy()
    tensors["head.weight"] = model.head.weight.detach().cpu().numpy()
    if model.head.bias is not None:
        tensors["head.bias"] = model.head.bias.detach().cpu().numpy()
    meta = {
        "mode": model.mode.value,
        "backbone": model.backbone.spec.name,
        "head_classes": model.head.classes,
        "head_bias": model.head.bias is not None,
    }
    if model.lora_config is not None:
        cfg = asdict(model.lora_config)
        cfg["targets"] = [t.value for t in model.lora_config.targets]
        meta["lora_config"] = cfg
        meta["gamma"] = model.lora_config.scale
    save_archive(path, tensors, meta=meta)


def load_adapter_checkpoint(path: str | Path, backbone: nn.Module) -> AdaptedModel:
    """Rebuild an adapted model from a checkpoint onto a loaded backbone."""
    tensors, meta = load_archive(path)
    mode = AdaptMode(meta["mode"])
    head = ProbeHead(
        backbone.spec.feature_dim,
        classes=int(meta.get("head_classes", 2)),
        bias=bool(meta.get("head_bias", False)),
    )
    with torch.no_grad():
        head.weight.copy_(torch.from_numpy(tensors["head.weight"]))
        if head.bias is not None:
            head.bias.copy_(torch.from_numpy(tensors["head.bias"]))
    if mode is AdaptMode.LINEAR_PROBE:
        return linear_probe(backbone, head=head)
    if mode is AdaptMode.FULL_FINETUNE:
        return full_finetune(backbone, head=head)
    raw = dict(meta["lora_config"])
    raw["targets"] = tuple(raw["targets"])
    config = LoraConfig(**raw)
    model = inject_lora(backbone, config, head=head)
    with torch.no_grad():
        for target_path, layer in model.adapters.items():
            layer.A.copy_(torch.from_numpy(tensors[f"adapter.{target_path}.A"]))
            layer.B.copy_(torch.from_numpy(tensors[f"adapter.{target_path}.B"]))
    return model
