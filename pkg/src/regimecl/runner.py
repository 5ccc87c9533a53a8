"""Experiment-matrix orchestration: every regime x method x task-order cell.

Output layout under ``output_dir``::

    manifest.json                      cell list with status, orders, digests
    runs/<regime>__<method>__oNN.json  one RunResult per cell
    runs/<regime>__<method>__oNN.steps.csv   per-step records (write_steps)
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .config import SCHEMA_VERSION, ExperimentConfig
from .data import (
    TaskData,
    TaskOrder,
    load_idx,
    limit_per_class,
    orders_digest,
    sample_orders,
    split_tasks,
    synth_gaussian_tasks,
    task_data_from_split,
    task_data_native,
)
from .nn import NetworkSpec
from .regime import regime_label
from .rng import hash64
from .trainer import RunResult, StepRecord, TrainHyper, run_sequence

log = logging.getLogger(__name__)

STEP_COLUMNS = ["task", "step", "loss", "norm_g", "norm_r", "gamma", "norm_update_sq"]


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def prepare_tasks(cfg: ExperimentConfig) -> dict[int, TaskData]:
    T, C, ds_cfg = cfg.tasks, cfg.classes_per_task, cfg.dataset
    split_seed = hash64(cfg.master_seed, "split")
    if ds_cfg.kind == "synthetic":
        ds = synth_gaussian_tasks(T, C, ds_cfg.dim, ds_cfg.n_per_class, ds_cfg.separation,
                                  hash64(cfg.master_seed, "synthetic"))
        return task_data_from_split(ds, split_tasks(ds, T, C, ds_cfg.test_fraction, split_seed))
    train = load_idx(ds_cfg.train_images, ds_cfg.train_labels)
    if ds_cfg.max_per_class:
        train = limit_per_class(train, ds_cfg.max_per_class)
    if ds_cfg.test_images:
        test = load_idx(ds_cfg.test_images, ds_cfg.test_labels)
        if ds_cfg.max_per_class:
            test = limit_per_class(test, ds_cfg.max_per_class)
        return task_data_native(train, test, T, C)
    return task_data_from_split(train, split_tasks(train, T, C, ds_cfg.test_fraction, split_seed))


def experiment_orders(cfg: ExperimentConfig) -> list[TaskOrder]:
    return sample_orders(cfg.tasks, cfg.n_random_orders, hash64(cfg.master_seed, "orders"))


@dataclass(frozen=True)
class Cell:
    k_blocks: int
    regime: str
    method: str
    order: TaskOrder

    @property
    def stem(self) -> str:
        return f"{self.regime}__{self.method}__o{self.order.order_id:02d}"


def build_cells(cfg: ExperimentConfig, orders: list[TaskOrder]) -> list[Cell]:
    B = len(cfg.block_widths)
    return [
        Cell(k, regime_label(k, B), method, order)
        for k in cfg.regimes
        for method in cfg.methods
        for order in orders
    ]


def steps_csv(steps: list[StepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STEP_COLUMNS)
    for s in steps:
        writer.writerow([s.task_index, s.step, repr(s.loss_task), repr(s.norm_g), repr(s.norm_r),
                         repr(s.gamma_interaction), repr(s.norm_projected_update_sq)])
    return buf.getvalue()


def execute_cell(cfg: ExperimentConfig, tasks: dict[int, TaskData], cell: Cell) -> RunResult:
    spec = NetworkSpec(tasks[0].train.inputs.shape[1], cfg.block_widths, cfg.tasks, cfg.classes_per_task)
    hyper = TrainHyper(cfg.eta, cfg.epochs_per_task, cfg.batch_size, cfg.lambda_for(cell.method))
    order_id = cell.order.order_id
    return run_sequence(
        spec,
        cell.k_blocks,
        cell.method,
        cell.order,
        hyper,
        tasks,
        init_seed=hash64(cfg.master_seed, "init", order_id),
        data_seed=hash64(cfg.master_seed, "data", order_id),
        run_seed=hash64(cfg.master_seed, cell.regime, cell.method, order_id),
        method_params=cfg.method_params.get(cell.method),
    )


def _worker(cfg: ExperimentConfig, tasks: dict[int, TaskData], cell: Cell) -> tuple[dict | None, str | None, str | None]:
    try:
        result = execute_cell(cfg, tasks, cell)
    except Exception as exc:  # recorded in the manifest, the matrix keeps going
        return None, None, f"{type(exc).__name__}: {exc}"
    steps = steps_csv(result.steps) if cfg.write_steps else None
    return result.to_dict(), steps, None


def _manifest_text(manifest: dict[str, Any]) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def run_matrix(cfg: ExperimentConfig, workers: int | None = None, output_dir: str | Path | None = None) -> dict[str, Any]:
    """Run (or resume) every cell; return the final manifest.

    Cells already marked ``ok`` in an existing manifest with the same config
    digest are skipped. Failed cells are recorded and retried on the next run.
    """
    out = Path(output_dir or os.environ.get("RL_OUTPUT_DIR") or cfg.output_dir)
    manifest_path = out / "manifest.json"
    tasks = prepare_tasks(cfg)
    orders = experiment_orders(cfg)
    cells = build_cells(cfg, orders)

    previous: dict[str, dict] = {}
    if manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        if old.get("config_digest") != cfg.digest():
            raise RuntimeError(f"{out} holds results for a different config; choose another output_dir")
        previous = {c["stem"]: c for c in old["cells"]}

    entries: dict[str, dict] = {}
    pending: list[Cell] = []
    for cell in cells:
        prior = previous.get(cell.stem)
        if prior and prior["status"] == "ok" and (out / prior["file"]).exists():
            entries[cell.stem] = prior
        else:
            entries[cell.stem] = {"stem": cell.stem, "regime": cell.regime, "method": cell.method,
                                  "order_id": cell.order.order_id, "status": "pending", "file": None, "error": None}
            pending.append(cell)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "dataset": cfg.name,
        "config_digest": cfg.digest(),
        "forgetting_convention": cfg.forgetting_convention,
        "regimes": [regime_label(k, len(cfg.block_widths)) for k in cfg.regimes],
        "regime_depths": list(cfg.regimes),
        "methods": list(cfg.methods),
        "orders": [list(o.perm) for o in orders],
        "orders_digest": orders_digest(orders),
        "cells": [],
    }

    def record(cell: Cell, payload: dict | None, steps: str | None, error: str | None) -> None:
        entry = entries[cell.stem]
        if error is None:
            payload["orders_digest"] = manifest["orders_digest"]
            rel = f"runs/{cell.stem}.json"
            atomic_write(out / rel, json.dumps(payload, indent=1, sort_keys=True) + "\n")
            if steps is not None:
                atomic_write(out / f"runs/{cell.stem}.steps.csv", steps)
            entry.update(status="ok", file=rel, error=None)
        else:
            log.warning("cell %s failed: %s", cell.stem, error)
            entry.update(status="failed", file=None, error=error)
        manifest["cells"] = [entries[c.stem] for c in cells]
        atomic_write(manifest_path, _manifest_text(manifest))

    manifest["cells"] = [entries[c.stem] for c in cells]
    atomic_write(manifest_path, _manifest_text(manifest))

    n_workers = workers if workers is not None else (cfg.workers or os.cpu_count() or 1)
    log.info("running %d of %d cells with %d worker(s)", len(pending), len(cells), n_workers)
    if n_workers <= 1 or len(pending) <= 1:
        for cell in pending:
            record(cell, *_worker(cfg, tasks, cell))
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = {pool.submit(_worker, cfg, tasks, cell): cell for cell in pending}
            for fut in as_completed(futures):
                record(futures[fut], *fut.result())
    return manifest
