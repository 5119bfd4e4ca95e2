"""Case-level split plans: fixed test set, Monte Carlo folds,
nested dataset-fraction ladders, and cross-domain assignments.

Splits are case-granular (a case belongs to exactly one role per fold)
and target annotation mass, reconciling the 20%-of-annotations target
with leakage-free case separation. Every draw is derived from the plan
seed, so a plan regenerates byte-identically from (manifest, seed,
parameters).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mitobench.errors import ValidationError
from mitobench.ingest.manifest import AnnotationRecord, DatasetManifest, Label

SCHEMA_VERSION = 1
DEFAULT_FRACTIONS = (0.001, 0.01, 0.1, 1.0)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from heterogeneous parts."""
    digest = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    train_cases: tuple[str, ...]
    val_cases: tuple[str, ...]
    fraction_subsets: dict[float, tuple[str, ...]] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "train_cases": list(self.train_cases),
            "val_cases": list(self.val_cases),
            "fractions": {repr(f): list(ids) for f, ids in sorted(self.fraction_subsets.items())},
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FoldSpec":
        return cls(
            fold_index=int(obj["fold_index"]),
            train_cases=tuple(obj["train_cases"]),
            val_cases=tuple(obj["val_cases"]),
            fraction_subsets={float(f): tuple(ids) for f, ids in obj.get("fractions", {}).items()},
            flags=tuple(obj.get("flags", ())),
        )


@dataclass(frozen=True)
class SplitPlan:
    kind: str  # SCALING | CROSS_DOMAIN
    seed: int
    manifest_name: str
    test_cases: tuple[str, ...]
    folds: tuple[FoldSpec, ...]
    fractions: tuple[float, ...] = (1.0,)
    train_domain: str | None = None
    test_target: float = 0.2
    test_mass: int = 0
    total_mass: int = 0
    flags: tuple[str, ...] = ()

    def header_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "manifest_name": self.manifest_name,
            "test_cases": list(self.test_cases),
            "fractions": [repr(f) for f in self.fractions],
            "train_domain": self.train_domain,
            "test_target": self.test_target,
            "test_mass": self.test_mass,
            "total_mass": self.total_mass,
            "flags": list(self.flags),
        }


def plan_to_lines(plan: SplitPlan) -> list[str]:
    lines = [json.dumps(plan.header_json(), sort_keys=True)]
    lines.extend(json.dumps(f.to_json(), sort_keys=True) for f in plan.folds)
    return lines


def save_plan(plan: SplitPlan, path: str | Path) -> None:
    Path(path).write_text("\n".join(plan_to_lines(plan)) + "\n", encoding="utf-8")


def load_plan(path: str | Path) -> SplitPlan:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty plan document")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{path}: unsupported plan schema {header.get('schema_version')!r}")
    return SplitPlan(
        kind=header["kind"],
        seed=int(header["seed"]),
        manifest_name=header.get("manifest_name", ""),
        test_cases=tuple(header["test_cases"]),
        folds=tuple(FoldSpec.from_json(json.loads(ln)) for ln in lines[1:]),
        fractions=tuple(float(f) for f in header.get("fractions", ["1.0"])),
        train_domain=header.get("train_domain"),
        test_target=float(header.get("test_target", 0.2)),
        test_mass=int(header.get("test_mass", 0)),
        total_mass=int(header.get("total_mass", 0)),
        flags=tuple(header.get("flags", ())),
    )


def greedy_mass_split(
    case_counts: dict[str, int], target_mass: float, rng: np.random.Generator
) -> tuple[list[str], int]:
    """Shuffle cases, add while below target, then keep or drop the last
    case by whichever leaves the mass closer. Never returns a zero-mass
    selection while a positive target is achievable."""
    order = sorted(case_counts)
    rng.shuffle(order)
    chosen: list[str] = []
    mass = 0
    for case in order:
        if mass >= target_mass:
            break
        chosen.append(case)
        mass += case_counts[case]
    if chosen and mass >= target_mass > 0:
        last = chosen[-1]
        without = mass - case_counts[last]
        if abs(without - target_mass) < abs(mass - target_mass) and without > 0:
            chosen.pop()
            mass = without
    return chosen, mass


def make_test_split(
    manifest: DatasetManifest, target: float = 0.2, seed: int = 0
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Split cases into (test, trainval) targeting ``target`` of the
    total annotation mass for the test side."""
    counts = manifest.case_annotation_counts()
    if len(counts) < 2:
        raise ValidationError("manifest must contain at least 2 cases to split")
    labels = {r.label for r in manifest.records}
    if len(labels) < 2:
        raise ValidationError("manifest must contain both labels")
    total = sum(counts.values())
    rng = np.random.default_rng(derive_seed(seed, "test-split"))
    test, mass = greedy_mass_split(counts, target * total, rng)
    trainval = sorted(set(counts) - set(test))
    if target < 1.0:
        if mass == 0:
            raise ValidationError("degenerate split: test side has zero annotation mass")
        if total - mass == 0:
            raise ValidationError("degenerate split: trainval side has zero annotation mass")
    return tuple(sorted(test)), tuple(trainval)


def make_folds(
    trainval_cases,
    case_counts: dict[str, int],
    k: int = 5,
    val_fraction: float = 0.2,
    seed: int = 0,
    allow_empty_val: bool = False,
) -> list[FoldSpec]:
    """k independent Monte Carlo draws of a case-level validation subset."""
    cases = sorted(trainval_cases)
    if len(cases) < 2:
        if not (allow_empty_val and len(cases) == 1):
            raise ValidationError("need at least 2 trainval cases for folds")
    if val_fraction == 0.0 and not allow_empty_val:
        raise ValidationError("empty validation requires allow_empty_val=True")
    pool = {c: case_counts.get(c, 0) for c in cases}
    total = sum(pool.values())
    folds = []
    for i in range(k):
        flags: list[str] = []
        if val_fraction > 0.0 and len(cases) >= 2:
            rng = np.random.default_rng(derive_seed(seed, "fold-val", i))
            val, mass = greedy_mass_split(pool, val_fraction * total, rng)
            if mass == 0 or len(val) == len(cases):
                # Force a usable two-sided split on tiny pools.
                by_mass = sorted(cases, key=lambda c: (abs(pool[c] - val_fraction * total), c))
                val = [by_mass[0]] if len(cases) > 1 else []
                flags.append("forced_minimal_val")
        else:
            val = []
            flags.append("empty_val")
        train = tuple(sorted(set(cases) - set(val)))
        if len(train) == 1:
            flags.append("minimal")
        folds.append(
            FoldSpec(
                fold_index=i,
                train_cases=train,
                val_cases=tuple(sorted(val)),
                flags=tuple(flags),
            )
        )
    return folds


def subsample_fraction(records: list[AnnotationRecord], fraction: float, seed: int) -> tuple[str, ...]:
    """Stratified seeded annotation subset of size ceil(fraction * N) (+-1).

    For a fixed (pool, seed), subsets are per-label permutation prefixes,
    so subsets at smaller fractions nest inside larger ones. At least one
    annotation per present class is kept.
    """
    if not records:
        raise ValidationError("training pool is empty")
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    pos = sorted(r.annotation_id for r in records if r.label is Label.MITOTIC_FIGURE)
    neg = sorted(r.annotation_id for r in records if r.label is not Label.MITOTIC_FIGURE)
    n = len(records)
    n_f = math.ceil(fraction * n)
    ratio = len(pos) / n
    n_pos = int(round(n_f * ratio))
    n_neg = n_f - n_pos
    if pos:
        n_pos = min(max(n_pos, 1), len(pos))
    if neg:
        n_neg = min(max(n_neg, 1), len(neg))
    perm_pos = list(np.random.default_rng(derive_seed(seed, "frac", "pos")).permutation(pos))
    perm_neg = list(np.random.default_rng(derive_seed(seed, "frac", "neg")).permutation(neg))
    return tuple(sorted(perm_pos[:n_pos] + perm_neg[:n_neg]))


def build_fraction_ladder(
    records: list[AnnotationRecord], fractions, seed: int
) -> dict[float, tuple[str, ...]]:
    return {f: subsample_fraction(records, f, seed) for f in sorted(fractions)}


def make_scaling_plan(
    manifest: DatasetManifest,
    fractions=DEFAULT_FRACTIONS,
    k: int = 5,
    test_target: float = 0.2,
    val_fraction: float = 0.2,
    seed: int = 0,
) -> SplitPlan:
    """Fixed test split, k Monte Carlo folds, nested fraction ladders."""
    test_cases, trainval = make_test_split(manifest, target=test_target, seed=seed)
    counts = manifest.case_annotation_counts()
    folds = make_folds(trainval, counts, k=k, val_fraction=val_fraction, seed=seed)
    enriched = []
    for fold in folds:
        train_records = manifest.records_for_cases(fold.train_cases)
        ladder = build_fraction_ladder(train_records, fractions, derive_seed(seed, "ladder", fold.fold_index))
        enriched.append(
            FoldSpec(
                fold_index=fold.fold_index,
                train_cases=fold.train_cases,
                val_cases=fold.val_cases,
                fraction_subsets=ladder,
                flags=fold.flags,
            )
        )
    test_mass = sum(counts[c] for c in test_cases)
    return SplitPlan(
        kind="SCALING",
        seed=seed,
        manifest_name=manifest.name,
        test_cases=test_cases,
        folds=tuple(enriched),
        fractions=tuple(sorted(fractions)),
        test_target=test_target,
        test_mass=test_mass,
        total_mass=sum(counts.values()),
    )


def make_cross_domain_plan(
    manifest: DatasetManifest,
    train_domain: str,
    runs: int = 5,
    holdout: float = 0.2,
    seed: int = 0,
) -> SplitPlan:
    """Plan for one training domain: a fixed in-domain 20% holdout plus
    ``runs`` Monte Carlo train/val folds over the remaining cases. Other
    domains serve wholesale as out-of-domain test sets."""
    domains = manifest.domains()
    if len(domains) < 2:
        raise ValidationError("cross-domain plan needs at least 2 domains")
    if train_domain not in domains:
        raise ValidationError(f"train_domain {train_domain!r} not in manifest domains {domains}")
    domain_records = manifest.records_for_domain(train_domain)
    counts: dict[str, int] = {}
    for r in domain_records:
        counts[r.case_id] = counts.get(r.case_id, 0) + 1
    if len(counts) < 2:
        raise ValidationError(f"train_domain {train_domain!r} has fewer than 2 cases")
    total = sum(counts.values())
    plan_flags: list[str] = []

    rng = np.random.default_rng(derive_seed(seed, "xdom-holdout", train_domain))
    holdout_cases, mass = greedy_mass_split(counts, holdout * total, rng)
    if not holdout_cases or mass == 0:
        forced = min(counts, key=lambda c: (abs(counts[c] - holdout * total), c))
        holdout_cases, mass = [forced], counts[forced]
        plan_flags.append("forced_holdout")
    if len(holdout_cases) == len(counts):
        holdout_cases = holdout_cases[:-1]
        mass = sum(counts[c] for c in holdout_cases)
    remaining = sorted(set(counts) - set(holdout_cases))
    if len(remaining) == 1:
        plan_flags.append("minimal")
    folds = make_folds(
        remaining,
        counts,
        k=runs,
        val_fraction=0.2 if len(remaining) >= 2 else 0.0,
        seed=derive_seed(seed, "xdom-folds", train_domain),
        allow_empty_val=len(remaining) < 2,
    )
    return SplitPlan(
        kind="CROSS_DOMAIN",
        seed=seed,
        manifest_name=manifest.name,
        test_cases=tuple(sorted(holdout_cases)),
        folds=tuple(folds),
        fractions=(1.0,),
        train_domain=train_domain,
        test_target=holdout,
        test_mass=mass,
        total_mass=total,
        flags=tuple(plan_flags),
    )


@dataclass
class LeakageReport:
    violations: list[dict] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations


def verify_no_leakage(plan: SplitPlan, manifest: DatasetManifest) -> LeakageReport:
    """Check pairwise role disjointness per fold and that every
    annotation's case lands in exactly one role."""
    report = LeakageReport()
    manifest_cases = set(manifest.cases())
    if plan.kind == "CROSS_DOMAIN":
        in_scope = {r.case_id for r in manifest.records_for_domain(plan.train_domain)}
        ood_cases = manifest_cases - in_scope
    else:
        in_scope = manifest_cases
        ood_cases = set()

    for case in plan.test_cases:
        if case not in manifest_cases:
            report.violations.append({"kind": "unknown_case", "case_id": case, "role": "test"})

    for fold in plan.folds:
        roles = {
            "test": set(plan.test_cases),
            "train": set(fold.train_cases),
            "val": set(fold.val_cases),
        }
        if ood_cases:
            roles["out_of_domain"] = set(ood_cases)
        names = sorted(roles)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                for case in sorted(roles[a] & roles[b]):
                    report.violations.append(
                        {
                            "kind": "overlap",
                            "case_id": case,
                            "roles": (a, b),
                            "fold": fold.fold_index,
                        }
                    )
        assigned = set().union(*roles.values())
        for rec in manifest.records:
            if rec.case_id not in assigned:
                report.violations.append(
                    {
                        "kind": "orphan",
                        "case_id": rec.case_id,
                        "annotation_id": rec.annotation_id,
                        "fold": fold.fold_index,
                    }
                )
    return report
