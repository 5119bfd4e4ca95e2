"""Aggregation and report emission.

Aggregation is a pure fold over run records: per group, the arithmetic
mean and (by default population) standard deviation of each metric.
Cross-domain summaries average macro over scenarios: runs are first
averaged within each (train domain, test domain) pair, then pooled
across scenarios, so every scenario weighs equally.

``emit_report`` writes delimiter-separated tables, a human-readable
markdown report, and figures: scaling curves on a log fraction axis and
one train x test AUROC matrix per model and mode.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from mitobench.bench.store import ResultsStore, RunRecord
from mitobench.errors import ValidationError

METRICS = ("balanced_accuracy", "weighted_f1", "auroc")


def records_dataframe(records: list[RunRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        row = r.to_json()
        result = row.pop("result")
        for m in METRICS:
            row[m] = result[m]
        rows.append(row)
    return pd.DataFrame(rows)


def aggregate(
    records: list[RunRecord] | ResultsStore,
    group_by=("model", "mode"),
    metrics=METRICS,
    std: str = "population",
) -> pd.DataFrame:
    """mean +- std of each metric per group. ``std`` is "population"
    (N denominator) or "sample" (N-1)."""
    if isinstance(records, ResultsStore):
        records = records.records()
    if not records:
        raise ValidationError("no records to aggregate")
    if std not in ("population", "sample"):
        raise ValidationError(f"std: expected 'population' or 'sample', got {std!r}")
    ddof = 0 if std == "population" else 1
    df = records_dataframe(records)
    group_by = list(group_by)
    grouped = df.groupby(group_by, dropna=False)
    out = []
    for key, group in grouped:
        key = key if isinstance(key, tuple) else (key,)
        row = dict(zip(group_by, key))
        row["n_runs"] = len(group)
        for m in metrics:
            values = group[m].dropna().to_numpy(dtype=float)
            row[f"{m}_mean"] = float(values.mean()) if len(values) else float("nan")
            row[f"{m}_std"] = float(values.std(ddof=ddof)) if len(values) > ddof else 0.0
        out.append(row)
    return pd.DataFrame(out).sort_values(group_by).reset_index(drop=True)


def scaling_table(records: list[RunRecord], fraction: float | None = None, std="population") -> pd.DataFrame:
    scaling = [r for r in records if r.plan_kind == "SCALING"]
    if fraction is not None:
        scaling = [r for r in scaling if r.fraction == fraction]
    if not scaling:
        raise ValidationError("no scaling records")
    group = ("model", "mode") if fraction is not None else ("model", "mode", "fraction")
    return aggregate(scaling, group_by=group, std=std)


def cross_domain_table(records: list[RunRecord], std="population") -> pd.DataFrame:
    """Table-5 shape: one row per (model, mode), in-domain and
    out-of-domain mean +- std for each metric, macro over scenarios."""
    xdom = [r for r in records if r.plan_kind == "CROSS_DOMAIN"]
    if not xdom:
        raise ValidationError("no cross-domain records")
    ddof = 0 if std == "population" else 1
    df = records_dataframe(xdom)
    scenario = df.groupby(
        ["model", "mode", "in_domain", "train_domain", "test_domain"], dropna=False
    )[list(METRICS)].mean().reset_index()
    rows = []
    for (model, mode), group in scenario.groupby(["model", "mode"]):
        row = {"model": model, "mode": mode}
        for in_domain, label in ((True, "in_domain"), (False, "out_of_domain")):
            part = group[group["in_domain"] == in_domain]
            row[f"n_{label}_scenarios"] = len(part)
            for m in METRICS:
                values = part[m].dropna().to_numpy(dtype=float)
                row[f"{m}_{label}_mean"] = float(values.mean()) if len(values) else float("nan")
                row[f"{m}_{label}_std"] = float(values.std(ddof=ddof)) if len(values) > ddof else 0.0
        rows.append(row)
    return pd.DataFrame(rows).sort_values(["model", "mode"]).reset_index(drop=True)


def cross_domain_matrix(records: list[RunRecord], model: str, mode: str, metric="auroc") -> pd.DataFrame:
    """train domain x test domain mean metric for one (model, mode)."""
    df = records_dataframe([r for r in records if r.plan_kind == "CROSS_DOMAIN"])
    df = df[(df["model"] == model) & (df["mode"] == mode)]
    if df.empty:
        raise ValidationError(f"no cross-domain records for {model}/{mode}")
    return df.pivot_table(index="train_domain", columns="test_domain", values=metric, aggfunc="mean")


def _mean_std_markdown(df: pd.DataFrame, group_cols: list[str], metric_pairs) -> str:
    headers = group_cols + [label for label, _, _ in metric_pairs]
    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    for _, row in df.iterrows():
        cells = [str(row[c]) for c in group_cols]
        for _, mean_col, std_col in metric_pairs:
            if pd.isna(row[mean_col]):
                cells.append("-")
            else:
                cells.append(f"{row[mean_col]:.2f}±{row[std_col]:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def _plot_scaling_curves(df: pd.DataFrame, metric: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (model, mode), group in df.groupby(["model", "mode"]):
        group = group.sort_values("fraction")
        ax.errorbar(
            group["fraction"],
            group[f"{metric}_mean"],
            yerr=group[f"{metric}_std"],
            marker="o",
            capsize=3,
            label=f"{model} ({mode})",
        )
    ax.set_xscale("log")
    ax.set_xlabel("dataset fraction")
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_title(f"Dataset scaling: {metric.replace('_', ' ')}")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_cross_domain_matrix(matrix: pd.DataFrame, model: str, mode: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    values = matrix.to_numpy(dtype=float)
    im = ax.imshow(values, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(matrix.columns)), matrix.columns)
    ax.set_yticks(range(len(matrix.index)), matrix.index)
    ax.set_xlabel("test domain")
    ax.set_ylabel("train domain")
    ax.set_title(f"Mean AUROC: {model} ({mode})")
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            if np.isfinite(values[i, j]):
                ax.text(
                    j,
                    i,
                    f"{values[i, j]:.2f}",
                    ha="center",
                    va="center",
                    color="white" if values[i, j] < 0.6 else "black",
                    fontsize=8,
                )
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_report(store: ResultsStore, out_dir: str | Path, fmt: str = "md") -> list[Path]:
    """Write tables, figures and a report document; returns written paths."""
    if fmt not in ("md", "csv"):
        raise ValidationError(f"format: expected 'md' or 'csv', got {fmt!r}")
    records = store.records()
    if not records:
        raise ValidationError("results store is empty; nothing to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"output directory {out_dir} is not writable: {exc}") from None

    written: list[Path] = []
    md_sections: list[str] = ["# Benchmark report", ""]

    flat = records_dataframe(records)
    runs_csv = out_dir / "runs.csv"
    flat.to_csv(runs_csv, index=False)
    written.append(runs_csv)

    scaling = [r for r in records if r.plan_kind == "SCALING"]
    if scaling:
        per_fraction = scaling_table(scaling)
        path = out_dir / "scaling_summary.csv"
        per_fraction.to_csv(path, index=False)
        written.append(path)
        top_fraction = max(r.fraction for r in scaling if r.fraction is not None)
        full = scaling_table(scaling, fraction=top_fraction)
        path = out_dir / "scaling_full_data.csv"
        full.to_csv(path, index=False)
        written.append(path)
        for metric in METRICS:
            fig_path = out_dir / f"scaling_{metric}.png"
            _plot_scaling_curves(per_fraction, metric, fig_path)
            written.append(fig_path)
        md_sections += [
            f"## Dataset scaling (fraction = {top_fraction:g})",
            "",
            _mean_std_markdown(
                full,
                ["model", "mode"],
                [(m.replace("_", " "), f"{m}_mean", f"{m}_std") for m in METRICS],
            ),
            "",
            "Curves: " + ", ".join(f"`scaling_{m}.png`" for m in METRICS),
            "",
        ]

    xdom = [r for r in records if r.plan_kind == "CROSS_DOMAIN"]
    if xdom:
        table = cross_domain_table(xdom)
        path = out_dir / "crossdomain_summary.csv"
        table.to_csv(path, index=False)
        written.append(path)
        pairs = []
        for m in METRICS:
            pairs.append((f"{m.replace('_', ' ')} (in)", f"{m}_in_domain_mean", f"{m}_in_domain_std"))
            pairs.append(
                (f"{m.replace('_', ' ')} (out)", f"{m}_out_of_domain_mean", f"{m}_out_of_domain_std")
            )
        md_sections += [
            "## Cross-domain (macro over scenarios)",
            "",
            _mean_std_markdown(table, ["model", "mode"], pairs),
            "",
        ]
        for (model, mode), _ in records_dataframe(xdom).groupby(["model", "mode"]):
            matrix = cross_domain_matrix(xdom, model, mode)
            safe = f"{model}_{mode}".replace("/", "-").replace(" ", "_").lower()
            fig_path = out_dir / f"crossdomain_{safe}.png"
            _plot_cross_domain_matrix(matrix, model, mode, fig_path)
            written.append(fig_path)
            md_sections.append(f"Matrix figure: `crossdomain_{safe}.png`")
        md_sections.append("")

    md_sections.append(f"Total runs: {len(records)}")
    if fmt == "md":
        report_path = out_dir / "report.md"
        report_path.write_text("\n".join(md_sections) + "\n", encoding="utf-8")
        written.append(report_path)
    return written
