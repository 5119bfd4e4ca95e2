"""Training executor: balanced sampling, one-cycle Adam optimization,
per-epoch validation, and retrospective best-checkpoint selection.

Linear probing never augments and may reuse cached frozen embeddings;
LoRA and full fine-tuning see augmented pixels. The evaluation path
(validation and test) never augments in any mode.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from mitobench.adapt.lora import LoraConfig
from mitobench.adapt.model import AdaptedModel, AdaptMode, full_finetune, inject_lora, linear_probe
from mitobench.adapt.probe import ProbeHead
from mitobench.backbone.weights import load_archive, save_archive, state_checksum
from mitobench.errors import TrainingDiverged, ValidationError
from mitobench.ingest.augment import AugmentPolicy
from mitobench.ingest.images import ImageStore
from mitobench.ingest.manifest import AnnotationRecord, Label
from mitobench.ingest.patches import PatchSpec, extract_patch, normalize
from mitobench.metrics import EvalResult, evaluate
from mitobench.train.config import SamplerPolicy, TrainConfig, config_digest
from mitobench.train.losses import bce_loss
from mitobench.train.sampler import SOURCE_MITOTIC, BalancedSampler
from mitobench.train.schedule import one_cycle_lr


@dataclass
class FoldData:
    train_records: list[AnnotationRecord]
    val_records: list[AnnotationRecord]
    store: ImageStore
    patch_spec: PatchSpec
    sampler_policy: SamplerPolicy = field(default_factory=SamplerPolicy)
    augment_policy: AugmentPolicy | None = field(default_factory=AugmentPolicy)


class FeatureCache:
    """Frozen-backbone embeddings keyed by annotation id.

    Valid only for the (backbone, weights, patch spec) triple it was
    created for; a key mismatch invalidates the cache.
    """

    def __init__(self, backbone_name: str, weights_checksum: str, patch_spec: PatchSpec):
        self.key = (backbone_name, weights_checksum, config_digest(patch_spec))
        self._features: dict[str, torch.Tensor] = {}

    @classmethod
    def for_model(cls, model: AdaptedModel, patch_spec: PatchSpec) -> "FeatureCache":
        return cls(model.backbone.spec.name, state_checksum(model.backbone), patch_spec)

    def matches(self, model: AdaptedModel, patch_spec: PatchSpec) -> bool:
        return self.key == (
            model.backbone.spec.name,
            state_checksum(model.backbone),
            config_digest(patch_spec),
        )

    def get(self, annotation_id: str) -> torch.Tensor | None:
        return self._features.get(annotation_id)

    def put(self, annotation_id: str, feature: torch.Tensor) -> None:
        self._features[annotation_id] = feature

    def __len__(self) -> int:
        return len(self._features)


@dataclass
class Checkpoint:
    epoch: int
    tensors: dict[str, torch.Tensor]
    val_loss: float
    metrics: EvalResult | None = None

    def restore(self, model: AdaptedModel) -> None:
        params = dict(model.named_parameters())
        with torch.no_grad():
            for name, saved in self.tensors.items():
                params[name].copy_(saved)


@dataclass
class TrainResult:
    best: Checkpoint
    trace: list[dict]
    val_history: list[tuple[int, float]]
    total_steps: int


def _record_tensor(store, record, patch_spec) -> torch.Tensor:
    pixels = extract_patch(store, record, patch_spec)
    return torch.from_numpy(normalize(pixels, patch_spec).astype(np.float32))


def _embed_records(
    model: AdaptedModel,
    records: list[AnnotationRecord],
    store: ImageStore,
    patch_spec: PatchSpec,
    cache: FeatureCache | None,
    batch_size: int = 32,
) -> torch.Tensor:
    """Frozen-path embeddings for annotation records, cache-aware."""
    out: list[torch.Tensor | None] = [None] * len(records)
    missing: list[int] = []
    for i, rec in enumerate(records):
        cached = cache.get(rec.annotation_id) if cache is not None else None
        if cached is not None:
            out[i] = cached
        else:
            missing.append(i)
    with torch.no_grad():
        for start in range(0, len(missing), batch_size):
            idx = missing[start : start + batch_size]
            batch = torch.stack([_record_tensor(store, records[i], patch_spec) for i in idx])
            features = model.backbone.embed(batch)
            for row, i in enumerate(idx):
                out[i] = features[row]
                if cache is not None:
                    cache.put(records[i].annotation_id, features[row])
    return torch.stack(out)


def _validation_pass(
    model: AdaptedModel, data: FoldData, cache: FeatureCache | None, batch_size: int = 32
) -> tuple[float, EvalResult | None]:
    was_training = model.training
    model.eval()
    labels = torch.tensor(
        [1 if r.label is Label.MITOTIC_FIGURE else 0 for r in data.val_records],
        dtype=torch.int64,
    )
    logits_parts = []
    with torch.no_grad():
        if model.mode is AdaptMode.LINEAR_PROBE:
            features = _embed_records(
                model, data.val_records, data.store, data.patch_spec, cache, batch_size
            )
            logits = model.head(features)
        else:
            for start in range(0, len(data.val_records), batch_size):
                chunk = data.val_records[start : start + batch_size]
                batch = torch.stack(
                    [_record_tensor(data.store, r, data.patch_spec) for r in chunk]
                )
                logits_parts.append(model(batch))
            logits = torch.cat(logits_parts)
        loss = float(bce_loss(logits, labels))
        if model.head.classes == 1:
            scores = torch.sigmoid(logits.squeeze(-1))
        else:
            scores = torch.softmax(logits, dim=-1)[:, 1]
    snapshot = evaluate(labels.numpy(), scores.numpy()) if len(labels) else None
    if was_training:
        model.train()
    return loss, snapshot


def train(
    model: AdaptedModel,
    data: FoldData,
    config: TrainConfig = TrainConfig(),
    select_best: bool = True,
    feature_cache: FeatureCache | None = None,
) -> TrainResult:
    """Run pseudo_epochs x (epoch_length / batch_size) optimizer steps.

    Validation loss is computed on the full validation set (never
    augmented) after every pseudo-epoch; the minimum-loss snapshot is
    restored into the model before returning.
    """
    if select_best and not data.val_records:
        raise ValidationError("validation set is empty but best-checkpoint selection is on")
    torch.manual_seed(config.seed)

    probe_mode = model.mode is AdaptMode.LINEAR_PROBE
    augment_policy = None if probe_mode else data.augment_policy
    if probe_mode:
        if feature_cache is None:
            feature_cache = FeatureCache.for_model(model, data.patch_spec)
        elif not feature_cache.matches(model, data.patch_spec):
            feature_cache = FeatureCache.for_model(model, data.patch_spec)
    else:
        feature_cache = None

    sampler = BalancedSampler(
        data.train_records,
        data.store,
        data.patch_spec,
        policy=data.sampler_policy,
        augment_policy=augment_policy,
        seed=config.seed,
    )
    trainable = list(model.trainable_tensors().values())
    if not trainable:
        raise ValidationError("model has no trainable tensors")
    optimizer = torch.optim.Adam(
        trainable,
        lr=config.max_lr,
        betas=(config.optimizer.beta1, config.optimizer.beta2),
        eps=config.optimizer.eps,
    )

    trace: list[dict] = []
    val_history: list[tuple[int, float]] = []
    best: Checkpoint | None = None
    total = config.total_steps
    step = 0
    model.train()
    for epoch in range(config.pseudo_epochs):
        for _ in range(config.steps_per_epoch):
            lr = one_cycle_lr(
                step,
                total,
                config.max_lr,
                pct_start=config.schedule.pct_start,
                div_factor=config.schedule.div_factor,
                final_div=config.schedule.final_div,
            )
            for group in optimizer.param_groups:
                group["lr"] = lr
            if probe_mode:
                selections = sampler.next_records(config.batch_size)
                features, labels = _probe_batch(
                    model, sampler, selections, data, feature_cache
                )
                logits = model.head(features)
            else:
                batch = sampler.next_batch(config.batch_size)
                logits = model(batch.patches)
                labels = batch.labels
            loss = bce_loss(logits, labels)
            loss_value = loss.detach().item()
            if not math.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss {loss_value} at step {step}", trace=trace
                )
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(trainable, config.grad_clip)
            optimizer.step()
            trace.append({"step": step, "lr": lr, "loss": loss_value})
            step += 1
        if data.val_records:
            val_loss, snapshot = _validation_pass(model, data, feature_cache)
            val_history.append((epoch, val_loss))
            if best is None or val_loss < best.val_loss:
                best = Checkpoint(
                    epoch=epoch,
                    tensors={
                        name: p.detach().clone()
                        for name, p in model.named_parameters()
                        if p.requires_grad
                    },
                    val_loss=val_loss,
                    metrics=snapshot,
                )
    model.eval()
    if best is None:
        best = Checkpoint(
            epoch=config.pseudo_epochs - 1,
            tensors={
                name: p.detach().clone()
                for name, p in model.named_parameters()
                if p.requires_grad
            },
            val_loss=float("nan"),
        )
    elif select_best:
        best.restore(model)
    return TrainResult(best=best, trace=trace, val_history=val_history, total_steps=step)


def _probe_batch(model, sampler, selections, data: FoldData, cache: FeatureCache | None):
    """Feature batch for linear probing: cached embeddings for annotation
    draws, fresh embeddings for random windows."""
    ann_records = [item for source, item in selections if source != "random"]
    features_by_id = {}
    if ann_records:
        unique = list({r.annotation_id: r for r in ann_records}.values())
        feats = _embed_records(model, unique, data.store, data.patch_spec, cache)
        features_by_id = {r.annotation_id: feats[i] for i, r in enumerate(unique)}
    rows, labels = [], []
    fresh = []
    for source, item in selections:
        if source == "random":
            pixels = sampler.materialize(source, item)
            fresh.append(torch.from_numpy(normalize(pixels, data.patch_spec).astype(np.float32)))
            rows.append(None)
        else:
            rows.append(features_by_id[item.annotation_id])
        labels.append(1 if source == SOURCE_MITOTIC else 0)
    if fresh:
        with torch.no_grad():
            fresh_feats = model.backbone.embed(torch.stack(fresh))
        it = iter(fresh_feats)
        rows = [next(it) if r is None else r for r in rows]
    return torch.stack(rows), torch.tensor(labels, dtype=torch.int64)


def predict_scores(
    model: AdaptedModel,
    records: list[AnnotationRecord],
    store: ImageStore,
    patch_spec: PatchSpec,
    batch_size: int = 32,
    feature_cache: FeatureCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(labels, positive-class probabilities) over annotation records.

    Evaluation path: annotation-anchored patches only, never augmented.
    """
    if not records:
        raise ValidationError("empty test set")
    model.eval()
    labels = np.array([1 if r.label is Label.MITOTIC_FIGURE else 0 for r in records])
    scores = []
    use_cache = feature_cache if model.mode is AdaptMode.LINEAR_PROBE else None
    with torch.no_grad():
        if model.mode is AdaptMode.LINEAR_PROBE:
            features = _embed_records(model, records, store, patch_spec, use_cache, batch_size)
            scores_t = model.head.positive_probability(features)
            scores = scores_t.numpy()
        else:
            for start in range(0, len(records), batch_size):
                chunk = records[start : start + batch_size]
                batch = torch.stack([_record_tensor(store, r, patch_spec) for r in chunk])
                scores.append(model.positive_probability(batch).numpy())
            scores = np.concatenate(scores)
    return labels, np.asarray(scores, dtype=np.float64)


def evaluate_model(
    model: AdaptedModel,
    records: list[AnnotationRecord],
    store: ImageStore,
    patch_spec: PatchSpec,
    threshold: float = 0.5,
    batch_size: int = 32,
    feature_cache: FeatureCache | None = None,
) -> EvalResult:
    labels, scores = predict_scores(
        model, records, store, patch_spec, batch_size=batch_size, feature_cache=feature_cache
    )
    return evaluate(labels, scores, threshold=threshold)


def trace_digest(trace: list[dict]) -> str:
    payload = "\n".join(json.dumps(row, sort_keys=True) for row in trace)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def save_trace(trace: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in trace:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def save_train_checkpoint(
    model: AdaptedModel,
    config: TrainConfig,
    result: TrainResult,
    path: str | Path,
) -> None:
    """Trainable tensors + config + seed + trace digest, one archive."""
    tensors = {
        name: p.detach().cpu().numpy()
        for name, p in model.named_parameters()
        if p.requires_grad
    }
    meta = {
        "mode": model.mode.value,
        "backbone": model.backbone.spec.name,
        "head_classes": model.head.classes,
        "head_bias": model.head.bias is not None,
        "train_config_digest": config_digest(config),
        "seed": config.seed,
        "trace_digest": trace_digest(result.trace),
        "best_epoch": result.best.epoch,
        "best_val_loss": result.best.val_loss,
    }
    if model.lora_config is not None:
        cfg = asdict(model.lora_config)
        cfg["targets"] = [t.value for t in model.lora_config.targets]
        meta["lora_config"] = cfg
    save_archive(path, tensors, meta=meta)


def load_train_checkpoint(path: str | Path, backbone) -> AdaptedModel:
    """Rebuild the adapted model a training checkpoint was saved from."""
    tensors, meta = load_archive(path)
    mode = AdaptMode(meta["mode"])
    head = ProbeHead(
        backbone.spec.feature_dim,
        classes=int(meta.get("head_classes", 2)),
        bias=bool(meta.get("head_bias", False)),
    )
    if mode is AdaptMode.LINEAR_PROBE:
        model = linear_probe(backbone, head=head)
    elif mode is AdaptMode.FULL_FINETUNE:
        model = full_finetune(backbone, head=head)
    else:
        raw = dict(meta["lora_config"])
        raw["targets"] = tuple(raw["targets"])
        model = inject_lora(backbone, LoraConfig(**raw), head=head)
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, arr in tensors.items():
            if name not in params:
                raise ValidationError(f"checkpoint tensor {name!r} unknown to the model")
            params[name].copy_(torch.from_numpy(arr).to(params[name].dtype))
    model.eval()
    return model
