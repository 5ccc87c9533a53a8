"""Aggregate stored runs into summary tables, tau matrices and plot data."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Any, Iterable, Sequence

from .config import SCHEMA_VERSION
from .metrics import (
    AccuracyMatrix,
    AgreementMatrix,
    average_accuracy,
    average_forgetting,
    grad_forgetting_tau,
    kendall_tau,
    mean_std,
    rank_methods,
    regime_agreement_matrix,
)
from .runner import atomic_write

SUMMARY_COLUMNS = ["dataset", "method", "regime", "mean_acc", "std_acc", "mean_forget", "std_forget", "n_orders"]
GRAD_FORGET_COLUMNS = ["method", "regime", "depth", "mean_grad", "mean_forget", "n_orders",
                       "tau_grad_forget_across_regimes", "tau_grad_forget_within_regime"]


def fmt(x: float | int | str) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, int):
        return str(x)
    return "" if math.isnan(x) else format(x, ".12g")


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    return buf.getvalue()


def forgetting_or_zero(m: AccuracyMatrix, convention: str) -> float:
    """Single-task sequences report zero forgetting."""
    return 0.0 if m.num_tasks < 2 else average_forgetting(m, convention)


def load_runs(results_dir: str | Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """Manifest plus every successfully stored run, each with acc/forget/grad added."""
    results_dir = Path(results_dir)
    manifest = json.loads((results_dir / "manifest.json").read_text())
    convention = manifest.get("forgetting_convention", "as_written")
    runs = []
    for cell in manifest["cells"]:
        if cell["status"] != "ok":
            continue
        run = json.loads((results_dir / cell["file"]).read_text())
        matrix = AccuracyMatrix.from_rows(run["accuracy_matrix"])
        run["avg_acc"] = average_accuracy(matrix)
        run["avg_forget"] = forgetting_or_zero(matrix, convention)
        grads = run["task_grad_means"]
        run["grad"] = sum(grads) / len(grads) if grads else 0.0
        runs.append(run)
    return manifest, runs


def agreement_from_runs(manifest: dict[str, Any], runs: list[dict[str, Any]]) -> AgreementMatrix:
    scores: dict[int, dict[str, dict[str, float]]] = defaultdict(lambda: defaultdict(dict))
    for run in runs:
        scores[run["order_id"]][run["regime"]][run["method"]] = run["avg_acc"]
    return regime_agreement_matrix(scores, manifest["regimes"])


def tau_pairs(manifest: dict[str, Any], runs: list[dict[str, Any]]) -> list[list[Any]]:
    """Per-order tau for every regime pair (NaN when undefined or incomplete)."""
    scores: dict[int, dict[str, dict[str, float]]] = defaultdict(lambda: defaultdict(dict))
    for run in runs:
        scores[run["order_id"]][run["regime"]][run["method"]] = run["avg_acc"]
    regimes = manifest["regimes"]
    rows = []
    for order_id in sorted(scores):
        for i, a in enumerate(regimes):
            for b in regimes[i + 1:]:
                sa, sb = scores[order_id].get(a), scores[order_id].get(b)
                tau = math.nan
                if sa and sb and set(sa) == set(sb) and len(sa) >= 2:
                    tau = kendall_tau(rank_methods(sa), rank_methods(sb))
                rows.append([order_id, a, b, tau])
    return rows


def tau_matrix_csv(agreement: AgreementMatrix) -> str:
    rows = []
    for i, regime in enumerate(agreement.regimes):
        rows.append([regime, *[float(x) for x in agreement.mean_tau[i]], agreement.excluded_by_row()[i]])
    return _csv(["regime", *agreement.regimes, "excluded_pairs"], rows)


def write_tau(results_dir: str | Path) -> AgreementMatrix:
    results_dir = Path(results_dir)
    manifest, runs = load_runs(results_dir)
    agreement = agreement_from_runs(manifest, runs)
    atomic_write(results_dir / "tau_matrix.csv", tau_matrix_csv(agreement))
    return agreement


def emit_reports(results_dir: str | Path) -> dict[str, Path]:
    """Write summary.csv, tau_matrix.csv, grad_forget.csv and plotdata/*.csv."""
    results_dir = Path(results_dir)
    manifest, runs = load_runs(results_dir)
    regimes: list[str] = manifest["regimes"]
    depth = dict(zip(regimes, manifest["regime_depths"]))
    methods: list[str] = manifest["methods"]
    dataset = manifest["dataset"]
    grouped: dict[tuple[str, str], list[dict]] = defaultdict(list)
    for run in runs:
        grouped[run["method"], run["regime"]].append(run)
    for group in grouped.values():
        group.sort(key=lambda r: r["order_id"])

    summary_rows = []
    for method in methods:
        for regime in regimes:
            group = grouped.get((method, regime), [])
            acc = mean_std(r["avg_acc"] for r in group)
            forget = mean_std(r["avg_forget"] for r in group)
            summary_rows.append([dataset, method, regime, *acc, *forget, len(group)])

    agreement = agreement_from_runs(manifest, runs)

    grad_rows = []
    for method in methods:
        means = []
        for regime in regimes:
            group = grouped.get((method, regime), [])
            means.append((mean_std(r["grad"] for r in group)[0], mean_std(r["avg_forget"] for r in group)[0]))
        usable = [m for m in means if not math.isnan(m[0])]
        across = grad_forgetting_tau(usable) if len(usable) >= 2 else math.nan
        for regime, (g, f) in zip(regimes, means):
            group = grouped.get((method, regime), [])
            within = (grad_forgetting_tau([(r["grad"], r["avg_forget"]) for r in group])
                      if len(group) >= 2 else math.nan)
            grad_rows.append([method, regime, depth[regime], g, f, len(group), across, within])

    ordered = sorted(runs, key=lambda r: (methods.index(r["method"]), regimes.index(r["regime"]), r["order_id"]))
    per_run = [
        [r["method"], r["regime"], depth[r["regime"]], r["order_id"], r["avg_acc"], r["avg_forget"], r["grad"]]
        for r in ordered
    ]
    task_grad = [
        [r["method"], r["regime"], r["order_id"], t, g]
        for r in ordered
        for t, g in enumerate(r["task_grad_means"])
    ]

    outputs = {
        "summary": results_dir / "summary.csv",
        "tau_matrix": results_dir / "tau_matrix.csv",
        "grad_forget": results_dir / "grad_forget.csv",
        "runs": results_dir / "plotdata" / "runs.csv",
        "task_grad": results_dir / "plotdata" / "task_grad.csv",
        "tau_pairs": results_dir / "plotdata" / "tau_pairs.csv",
        "meta": results_dir / "report_meta.json",
    }
    atomic_write(outputs["summary"], _csv(SUMMARY_COLUMNS, summary_rows))
    atomic_write(outputs["tau_matrix"], tau_matrix_csv(agreement))
    atomic_write(outputs["grad_forget"], _csv(GRAD_FORGET_COLUMNS, grad_rows))
    atomic_write(outputs["runs"], _csv(["method", "regime", "depth", "order_id", "avg_acc", "avg_forget", "grad"], per_run))
    atomic_write(outputs["task_grad"], _csv(["method", "regime", "order_id", "task_index", "grad_mean"], task_grad))
    atomic_write(outputs["tau_pairs"], _csv(["order_id", "regime_a", "regime_b", "tau"], tau_pairs(manifest, runs)))
    missing = [c["stem"] for c in manifest["cells"] if c["status"] != "ok"]
    meta = {
        "schema_version": SCHEMA_VERSION,
        "tau_variant": "tau-b",
        "forgetting_convention": manifest.get("forgetting_convention", "as_written"),
        "grad_summary": "mean over steps of ||P_S(g + lambda r)||_2 per task, then mean over tasks",
        "std": "population (ddof=0) over orders",
        "orders_digest": manifest["orders_digest"],
        "missing_cells": missing,
    }
    atomic_write(outputs["meta"], json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return outputs
