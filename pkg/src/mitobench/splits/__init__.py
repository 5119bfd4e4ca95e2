from mitobench.splits.plan import (
    DEFAULT_FRACTIONS,
    FoldSpec,
    LeakageReport,
    SplitPlan,
    build_fraction_ladder,
    derive_seed,
    greedy_mass_split,
    load_plan,
    make_cross_domain_plan,
    make_folds,
    make_scaling_plan,
    make_test_split,
    plan_to_lines,
    save_plan,
    subsample_fraction,
    verify_no_leakage,
)

__all__ = [
    "DEFAULT_FRACTIONS",
    "FoldSpec",
    "LeakageReport",
    "SplitPlan",
    "build_fraction_ladder",
    "derive_seed",
    "greedy_mass_split",
    "load_plan",
    "make_cross_domain_plan",
    "make_folds",
    "make_scaling_plan",
    "make_test_split",
    "plan_to_lines",
    "save_plan",
    "subsample_fraction",
    "verify_no_leakage",
]
