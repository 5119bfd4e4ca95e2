"""Experiment orchestration: the dataset-scaling sweep (fractions x
Monte Carlo folds against a fixed test set) and the cross-domain sweep
(per-domain training with in-domain holdout plus every other domain as
out-of-domain test sets).

Runs are independent and communicate only through the append-only
store; completed run_ids are skipped on resume and one failed run never
aborts the sweep.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from mitobench.adapt.lora import LoraConfig
from mitobench.adapt.model import AdaptedModel, AdaptMode, full_finetune, inject_lora, linear_probe
from mitobench.backbone.spec import BackboneRegistry
from mitobench.backbone.weights import load_weights
from mitobench.bench.store import ResultsStore, RunRecord
from mitobench.errors import MitobenchError, ValidationError
from mitobench.ingest.images import ImageStore
from mitobench.ingest.manifest import DatasetManifest
from mitobench.ingest.patches import PatchSpec
from mitobench.metrics import EvalResult
from mitobench.splits.plan import (
    SplitPlan,
    derive_seed,
    make_cross_domain_plan,
    make_scaling_plan,
)
from mitobench.train.config import RunSettings, config_digest
from mitobench.train.loop import FeatureCache, FoldData, evaluate_model, train


@dataclass
class SweepFailure:
    run_id: str
    reason: str


@dataclass
class SweepResult:
    new_records: list[RunRecord] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failures: list[SweepFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _adapt(backbone, mode: AdaptMode, lora_config: LoraConfig) -> AdaptedModel:
    if mode is AdaptMode.LINEAR_PROBE:
        return linear_probe(backbone)
    if mode is AdaptMode.LORA:
        return inject_lora(backbone, lora_config)
    return full_finetune(backbone)


def _resolve_weights(registry: BackboneRegistry, model_name: str, weights: dict[str, str] | None):
    spec = registry.get(model_name)
    source = (weights or {}).get(model_name) or spec.weights_source
    if not source:
        raise ValidationError(
            f"model {model_name!r} has no weights: supply --weights {model_name}=<archive or seed:N>"
        )
    return spec, source


def run_scaling_experiment(
    manifest: DatasetManifest,
    images: ImageStore,
    models: list[str],
    modes: list[AdaptMode],
    settings: RunSettings,
    results: ResultsStore,
    registry: BackboneRegistry,
    plan: SplitPlan | None = None,
    seed: int = 0,
    fractions=None,
    folds: int = 5,
    weights: dict[str, str] | None = None,
) -> SweepResult:
    """fractions x folds sessions per (model, mode), all evaluated on the
    plan's fixed test set."""
    if plan is None:
        kwargs = {"k": folds, "seed": seed}
        if fractions is not None:
            kwargs["fractions"] = fractions
        plan = make_scaling_plan(manifest, **kwargs)
    if plan.kind != "SCALING":
        raise ValidationError(f"expected a SCALING plan, got {plan.kind}")
    sweep = SweepResult()
    completed = results.completed_run_ids()
    test_records = manifest.records_for_cases(plan.test_cases)
    digest = config_digest(settings)

    for model_name in models:
        try:
            spec, source = _resolve_weights(registry, model_name, weights)
        except ValidationError as exc:
            sweep.failures.append(SweepFailure(run_id=f"{model_name}|*", reason=str(exc)))
            continue
        patch_spec = PatchSpec.for_backbone(spec)
        probe_cache: FeatureCache | None = None
        for mode in modes:
            for fold in plan.folds:
                for fraction in plan.fractions:
                    run_id = (
                        f"{manifest.name}|{model_name}|{mode.value}|scaling"
                        f"|seed{plan.seed}|fold{fold.fold_index}|frac{fraction!r}"
                    )
                    if run_id in completed:
                        sweep.skipped.append(run_id)
                        continue
                    try:
                        started = time.monotonic()
                        if fraction not in fold.fraction_subsets:
                            raise ValidationError(
                                f"plan fold {fold.fold_index} has no subset for fraction {fraction}"
                            )
                        subset = set(fold.fraction_subsets[fraction])
                        train_records = [
                            r
                            for r in manifest.records_for_cases(fold.train_cases)
                            if r.annotation_id in subset
                        ]
                        run_seed = derive_seed(
                            plan.seed, model_name, mode.value, fold.fold_index, repr(fraction)
                        )
                        backbone = load_weights(spec, source)
                        model = _adapt(backbone, mode, settings.lora)
                        config = replace(settings.train, seed=run_seed)
                        data = FoldData(
                            train_records=train_records,
                            val_records=manifest.records_for_cases(fold.val_cases),
                            store=images,
                            patch_spec=patch_spec,
                            sampler_policy=settings.sampler,
                            augment_policy=settings.augment,
                        )
                        if mode is AdaptMode.LINEAR_PROBE:
                            if probe_cache is None or not probe_cache.matches(model, patch_spec):
                                probe_cache = FeatureCache.for_model(model, patch_spec)
                            cache = probe_cache
                        else:
                            cache = None
                        train(model, data, config, feature_cache=cache)
                        eval_result = evaluate_model(
                            model, test_records, images, patch_spec, feature_cache=cache
                        )
                        record = RunRecord(
                            run_id=run_id,
                            session_id=run_id,
                            model=model_name,
                            mode=mode.value,
                            dataset=manifest.name,
                            plan_kind="SCALING",
                            fold_index=fold.fold_index,
                            seed=run_seed,
                            result=eval_result,
                            fraction=fraction,
                            wall_time=time.monotonic() - started,
                            config_digest=digest,
                        )
                        results.append(record)
                        sweep.new_records.append(record)
                    except MitobenchError as exc:
                        sweep.failures.append(SweepFailure(run_id=run_id, reason=str(exc)))
    return sweep


def run_cross_domain_experiment(
    manifest: DatasetManifest,
    images: ImageStore,
    models: list[str],
    modes: list[AdaptMode],
    settings: RunSettings,
    results: ResultsStore,
    registry: BackboneRegistry,
    runs: int = 5,
    holdout: float = 0.2,
    seed: int = 0,
    weights: dict[str, str] | None = None,
) -> SweepResult:
    """domains x runs sessions per (model, mode); every session is
    evaluated on the in-domain holdout and on each other domain."""
    domains = manifest.domains()
    if len(domains) < 2:
        raise ValidationError("cross-domain experiment needs at least 2 domains")
    plans = {
        domain: make_cross_domain_plan(manifest, domain, runs=runs, holdout=holdout, seed=seed)
        for domain in domains
    }
    sweep = SweepResult()
    completed = results.completed_run_ids()
    digest = config_digest(settings)

    for model_name in models:
        try:
            spec, source = _resolve_weights(registry, model_name, weights)
        except ValidationError as exc:
            sweep.failures.append(SweepFailure(run_id=f"{model_name}|*", reason=str(exc)))
            continue
        patch_spec = PatchSpec.for_backbone(spec)
        for mode in modes:
            for domain in domains:
                plan = plans[domain]
                for fold in plan.folds:
                    session_id = (
                        f"{manifest.name}|{model_name}|{mode.value}|xdom"
                        f"|seed{seed}|train{domain}|run{fold.fold_index}"
                    )
                    eval_ids = {d: f"{session_id}|test{d}" for d in domains}
                    missing = {d: rid for d, rid in eval_ids.items() if rid not in completed}
                    if not missing:
                        sweep.skipped.extend(eval_ids.values())
                        continue
                    sweep.skipped.extend(rid for rid in eval_ids.values() if rid not in missing.values())
                    try:
                        started = time.monotonic()
                        run_seed = derive_seed(seed, model_name, mode.value, domain, fold.fold_index)
                        backbone = load_weights(spec, source)
                        model = _adapt(backbone, mode, settings.lora)
                        config = replace(settings.train, seed=run_seed)
                        data = FoldData(
                            train_records=manifest.records_for_cases(fold.train_cases),
                            val_records=manifest.records_for_cases(fold.val_cases),
                            store=images,
                            patch_spec=patch_spec,
                            sampler_policy=settings.sampler,
                            augment_policy=settings.augment,
                        )
                        train(model, data, config, select_best=bool(data.val_records))
                        wall = time.monotonic() - started
                        for test_domain, run_id in missing.items():
                            if test_domain == domain:
                                test_records = manifest.records_for_cases(plan.test_cases)
                            else:
                                test_records = manifest.records_for_domain(test_domain)
                            eval_result = evaluate_model(model, test_records, images, patch_spec)
                            record = RunRecord(
                                run_id=run_id,
                                session_id=session_id,
                                model=model_name,
                                mode=mode.value,
                                dataset=manifest.name,
                                plan_kind="CROSS_DOMAIN",
                                fold_index=fold.fold_index,
                                seed=run_seed,
                                result=eval_result,
                                train_domain=domain,
                                test_domain=test_domain,
                                in_domain=test_domain == domain,
                                wall_time=wall,
                                config_digest=digest,
                            )
                            results.append(record)
                            sweep.new_records.append(record)
                    except MitobenchError as exc:
                        sweep.failures.append(SweepFailure(run_id=session_id, reason=str(exc)))
    return sweep
