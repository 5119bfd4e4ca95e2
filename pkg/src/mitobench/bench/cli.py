"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 sweep finished with
partial failures.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from mitobench.adapt.model import parse_mode
from mitobench.backbone.spec import default_registry
from mitobench.backbone.weights import load_weights
from mitobench.bench.experiments import run_cross_domain_experiment, run_scaling_experiment
from mitobench.bench.report import emit_report
from mitobench.bench.store import ResultsStore, RunRecord
from mitobench.errors import ValidationError
from mitobench.ingest.images import FileImageStore
from mitobench.ingest.manifest import import_manifest, load_manifest, save_manifest
from mitobench.ingest.patches import PatchSpec
from mitobench.splits.plan import (
    DEFAULT_FRACTIONS,
    load_plan,
    make_cross_domain_plan,
    make_scaling_plan,
    save_plan,
    verify_no_leakage,
)
from mitobench.train.config import config_digest, load_run_config
from mitobench.train.loop import (
    FoldData,
    evaluate_model,
    load_train_checkpoint,
    save_trace,
    save_train_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3


def _image_store(args, manifest=None) -> FileImageStore:
    root = getattr(args, "images", None)
    if not root and manifest is not None and manifest.image_root:
        root = manifest.image_root
    return FileImageStore(root)


def _parse_weights(pairs) -> dict[str, str]:
    weights = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValidationError(f"--weights expects name=source, got {pair!r}")
        name, source = pair.split("=", 1)
        weights[name] = source
    return weights


def _adapt_for_mode(backbone, mode, settings):
    from mitobench.adapt.model import AdaptMode, full_finetune, inject_lora, linear_probe

    if mode is AdaptMode.LINEAR_PROBE:
        return linear_probe(backbone)
    if mode is AdaptMode.LORA:
        return inject_lora(backbone, settings.lora)
    return full_finetune(backbone)


def cmd_import(args) -> int:
    manifest, report = import_manifest(args.source, args.mapping, name=args.name)
    save_manifest(manifest, args.out)
    print(report.summary())
    print(f"manifest written to {args.out}")
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.kind == "scaling":
        fractions = (
            tuple(float(f) for f in args.fractions.split(",")) if args.fractions else DEFAULT_FRACTIONS
        )
        plan = make_scaling_plan(
            manifest, fractions=fractions, k=args.folds, test_target=args.test_target, seed=args.seed
        )
        save_plan(plan, args.out)
        report = verify_no_leakage(plan, manifest)
        print(
            f"scaling plan: {len(plan.folds)} folds x {len(plan.fractions)} fractions, "
            f"test mass {plan.test_mass}/{plan.total_mass}, "
            f"leakage violations: {len(report.violations)}"
        )
        print(f"plan written to {args.out}")
        return EXIT_OK
    domains = [args.train_domain] if args.train_domain else manifest.domains()
    out = Path(args.out)
    multi = args.train_domain is None
    if multi:
        out.mkdir(parents=True, exist_ok=True)
    for domain in domains:
        plan = make_cross_domain_plan(
            manifest, domain, runs=args.runs, holdout=args.holdout, seed=args.seed
        )
        path = out / f"plan_{domain}.jsonl" if multi else out
        save_plan(plan, path)
        print(f"cross-domain plan for domain {domain}: {len(plan.folds)} runs -> {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    if (args.fraction is None) == (args.domain is None):
        raise ValidationError("exactly one of --fraction or --domain is required")
    manifest = load_manifest(args.manifest)
    plan = load_plan(args.plan)
    settings = load_run_config(args.config)
    registry = default_registry()
    spec = registry.get(args.model)
    mode = parse_mode(args.mode)
    weights = _parse_weights(args.weights)
    source = weights.get(args.model) or args.model_weights or spec.weights_source
    images = _image_store(args, manifest)
    store = ResultsStore(args.store)
    patch_spec = PatchSpec.for_backbone(spec)
    if args.fold < 0 or args.fold >= len(plan.folds):
        raise ValidationError(f"--fold {args.fold} out of range [0, {len(plan.folds)})")
    fold = plan.folds[args.fold]
    settings_train = replace(settings.train, seed=args.seed if args.seed is not None else settings.train.seed)
    digest = config_digest(settings)

    backbone = load_weights(spec, source)
    model = _adapt_for_mode(backbone, mode, settings)
    started = time.monotonic()

    if args.fraction is not None:
        if plan.kind != "SCALING":
            raise ValidationError("--fraction requires a scaling plan")
        if args.fraction not in fold.fraction_subsets:
            raise ValidationError(
                f"fraction {args.fraction} not in plan fractions {sorted(fold.fraction_subsets)}"
            )
        subset = set(fold.fraction_subsets[args.fraction])
        train_records = [
            r for r in manifest.records_for_cases(fold.train_cases) if r.annotation_id in subset
        ]
        evals = [("scaling", manifest.records_for_cases(plan.test_cases), None, None)]
        session_id = (
            f"{manifest.name}|{args.model}|{mode.value}|scaling"
            f"|seed{plan.seed}|fold{fold.fold_index}|frac{args.fraction!r}"
        )
    else:
        if plan.kind != "CROSS_DOMAIN" or plan.train_domain != args.domain:
            raise ValidationError(
                f"--domain {args.domain} requires the cross-domain plan for that domain"
            )
        train_records = manifest.records_for_cases(fold.train_cases)
        session_id = (
            f"{manifest.name}|{args.model}|{mode.value}|xdom"
            f"|seed{plan.seed}|train{args.domain}|run{fold.fold_index}"
        )
        evals = [("xdom", manifest.records_for_cases(plan.test_cases), args.domain, True)]
        for other in manifest.domains():
            if other != args.domain:
                evals.append(("xdom", manifest.records_for_domain(other), other, False))

    data = FoldData(
        train_records=train_records,
        val_records=manifest.records_for_cases(fold.val_cases),
        store=images,
        patch_spec=patch_spec,
        sampler_policy=settings.sampler,
        augment_policy=settings.augment,
    )
    result = train(model, data, settings_train, select_best=bool(data.val_records))
    wall = time.monotonic() - started
    for kind, test_records, test_domain, in_domain in evals:
        eval_result = evaluate_model(model, test_records, images, patch_spec)
        run_id = session_id if kind == "scaling" else f"{session_id}|test{test_domain}"
        store.append(
            RunRecord(
                run_id=run_id,
                session_id=session_id,
                model=args.model,
                mode=mode.value,
                dataset=manifest.name,
                plan_kind=plan.kind,
                fold_index=fold.fold_index,
                seed=settings_train.seed,
                result=eval_result,
                fraction=args.fraction,
                train_domain=args.domain,
                test_domain=test_domain,
                in_domain=in_domain,
                wall_time=wall,
                config_digest=digest,
            )
        )
        auroc = "n/a" if eval_result.auroc is None else f"{eval_result.auroc:.4f}"
        print(
            f"{run_id}: balanced_acc={eval_result.balanced_accuracy:.4f} "
            f"weighted_f1={eval_result.weighted_f1:.4f} auroc={auroc}"
        )
    if args.checkpoint:
        save_train_checkpoint(model, settings_train, result, args.checkpoint)
        print(f"checkpoint written to {args.checkpoint}")
    if args.trace:
        save_trace(result.trace, args.trace)
        print(f"trace written to {args.trace}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.test)
    registry = default_registry()
    from mitobench.backbone.weights import load_archive

    _, meta = load_archive(args.checkpoint)
    spec = registry.get(meta["backbone"])
    source = args.model_weights or spec.weights_source
    backbone = load_weights(spec, source)
    model = load_train_checkpoint(args.checkpoint, backbone)
    images = _image_store(args, manifest)
    patch_spec = PatchSpec.for_backbone(spec)
    eval_result = evaluate_model(model, manifest.records, images, patch_spec)
    store = ResultsStore(args.store)
    run_id = f"eval|{Path(args.checkpoint).stem}|{manifest.name}"
    store.append(
        RunRecord(
            run_id=run_id,
            session_id=run_id,
            model=spec.name,
            mode=meta["mode"],
            dataset=manifest.name,
            plan_kind="EVAL",
            fold_index=-1,
            seed=int(meta.get("seed", 0)),
            result=eval_result,
            config_digest=meta.get("train_config_digest", ""),
        )
    )
    auroc = "n/a" if eval_result.auroc is None else f"{eval_result.auroc:.4f}"
    print(
        f"{run_id}: balanced_acc={eval_result.balanced_accuracy:.4f} "
        f"weighted_f1={eval_result.weighted_f1:.4f} auroc={auroc}"
    )
    return EXIT_OK


def _sweep_common(args):
    manifest = load_manifest(args.manifest)
    settings = load_run_config(args.config)
    registry = default_registry()
    images = _image_store(args, manifest)
    store = ResultsStore(args.store)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    modes = [parse_mode(m.strip()) for m in args.modes.split(",") if m.strip()]
    weights = _parse_weights(args.weights)
    return manifest, settings, registry, images, store, models, modes, weights


def _print_sweep(sweep) -> int:
    print(
        f"sweep: {len(sweep.new_records)} new records, "
        f"{len(sweep.skipped)} skipped, {len(sweep.failures)} failures"
    )
    for failure in sweep.failures:
        print(f"  FAILED {failure.run_id}: {failure.reason}", file=sys.stderr)
    return EXIT_OK if sweep.ok else EXIT_PARTIAL


def cmd_scaling(args) -> int:
    manifest, settings, registry, images, store, models, modes, weights = _sweep_common(args)
    plan = load_plan(args.plan) if args.plan else None
    fractions = (
        tuple(float(f) for f in args.fractions.split(",")) if args.fractions else None
    )
    sweep = run_scaling_experiment(
        manifest,
        images,
        models,
        modes,
        settings,
        store,
        registry,
        plan=plan,
        seed=args.seed,
        fractions=fractions,
        folds=args.folds,
        weights=weights,
    )
    return _print_sweep(sweep)


def cmd_crossdomain(args) -> int:
    manifest, settings, registry, images, store, models, modes, weights = _sweep_common(args)
    sweep = run_cross_domain_experiment(
        manifest,
        images,
        models,
        modes,
        settings,
        store,
        registry,
        runs=args.runs,
        holdout=args.holdout,
        seed=args.seed,
        weights=weights,
    )
    return _print_sweep(sweep)


def cmd_report(args) -> int:
    store = ResultsStore(args.store)
    written = emit_report(store, args.out, fmt=args.format)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mitobench",
        description="Benchmark frozen feature extractors for mitotic-figure patch classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import", help="convert an annotation source into a canonical manifest")
    p.add_argument("--source", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("split", help="build a leakage-free split plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=("scaling", "crossdomain"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", default=None, help="comma list, e.g. 0.001,0.01,0.1,1.0")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--test-target", type=float, default=0.2)
    p.add_argument("--train-domain", default=None)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--holdout", type=float, default=0.2)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="run one training session from a plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("probe", "lora", "full"), required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--domain", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--store", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--weights", action="append", help="name=source, repeatable")
    p.add_argument("--model-weights", default=None, help="weights source for --model")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint on a test manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--model-weights", default=None)
    p.set_defaults(func=cmd_eval)

    for name, helptext in (
        ("scaling", "run the dataset-scaling sweep"),
        ("crossdomain", "run the cross-domain sweep"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--manifest", required=True)
        p.add_argument("--models", required=True, help="comma list of registry names")
        p.add_argument("--modes", required=True, help="comma list of probe,lora,full")
        p.add_argument("--config", default=None)
        p.add_argument("--store", required=True)
        p.add_argument("--images", default=None)
        p.add_argument("--weights", action="append")
        p.add_argument("--seed", type=int, default=0)
        if name == "scaling":
            p.add_argument("--plan", default=None)
            p.add_argument("--fractions", default=None)
            p.add_argument("--folds", type=int, default=5)
            p.set_defaults(func=cmd_scaling)
        else:
            p.add_argument("--runs", type=int, default=5)
            p.add_argument("--holdout", type=float, default=0.2)
            p.set_defaults(func=cmd_crossdomain)

    p = sub.add_parser("report", help="aggregate a results store into tables and figures")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
