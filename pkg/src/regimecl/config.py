"""Experiment configuration: YAML schema, defaults and validation.

Example::

    name: synthetic
    master_seed: 0
    tasks: 5
    classes_per_task: 2
    n_random_orders: 10
    regimes: [1, 2, 4]          # number of trainable trailing blocks
    methods: [ewc, si, lwf, gem]
    network: {block_widths: [32, 32, 32, 32]}
    dataset: {kind: synthetic, dim: 16, n_per_class: 60, separation: 3.0, test_fraction: 0.25}
    train: {eta: 0.05, epochs_per_task: 5, batch_size: 64}
    ewc: {gamma: 0.9, lambda: 1.0}
    si: {xi: 0.1, lambda: 1.0}
    lwf: {temperature: 2.0, lambda: 1.0}
    gem: {memory_per_task: 32, margin: 0.0}

IDX datasets use ``dataset: {kind: idx, train_images: ..., train_labels: ...}``
with optional ``test_images``/``test_labels`` (otherwise ``test_fraction``
applies) and ``max_per_class``. Relative paths resolve against the config file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .metrics import FORGETTING_CONVENTIONS
from .methods import METHOD_NAMES

SCHEMA_VERSION = 1

METHOD_DEFAULTS: dict[str, dict[str, float]] = {
    "ewc": {"gamma": 0.9, "lambda": 1.0},
    "si": {"xi": 0.1, "lambda": 1.0},
    "lwf": {"temperature": 2.0, "lambda": 1.0},
    "gem": {"memory_per_task": 32, "margin": 0.0},
    "sgd": {},
}

_TOP_KEYS = {
    "name", "master_seed", "output_dir", "tasks", "classes_per_task", "n_random_orders",
    "regimes", "methods", "forgetting_convention", "write_steps", "workers",
    "network", "dataset", "train", *METHOD_DEFAULTS,
}
_SYNTH_KEYS = {"kind", "dim", "n_per_class", "separation", "test_fraction"}
_IDX_KEYS = {"kind", "train_images", "train_labels", "test_images", "test_labels", "test_fraction", "max_per_class"}
_TRAIN_KEYS = {"eta", "epochs_per_task", "batch_size"}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class _UniqueKeyLoader(yaml.SafeLoader):
    pass


def _construct_unique_mapping(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ConfigError([f"duplicate key {key!r} (line {key_node.start_mark.line + 1})"])
        seen.add(key)
    return loader.construct_mapping(node, deep=deep)


_UniqueKeyLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_unique_mapping)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    dim: int = 16
    n_per_class: int = 60
    separation: float = 3.0
    test_fraction: float = 0.25
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    max_per_class: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "synthetic"
    master_seed: int = 0
    output_dir: str = "results"
    tasks: int = 5
    classes_per_task: int = 2
    n_random_orders: int = 10
    regimes: tuple[int, ...] = (1,)
    methods: tuple[str, ...] = ("ewc", "si", "lwf", "gem")
    block_widths: tuple[int, ...] = (32, 32, 32, 32)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    eta: float = 0.05
    epochs_per_task: int = 5
    batch_size: int = 64
    method_params: dict[str, dict[str, float]] = field(default_factory=dict)
    forgetting_convention: str = "as_written"
    write_steps: bool = False
    workers: int = 0

    def lambda_for(self, method: str) -> float:
        return float(self.method_params.get(method, {}).get("lambda", 0.0))

    def digest(self) -> str:
        """Hash of everything that affects results (output_dir and workers excluded)."""
        payload = asdict(self)
        payload.pop("output_dir")
        payload.pop("workers")
        text = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _check_keys(section: dict, allowed: set[str], where: str, errors: list[str]) -> None:
    for key in sorted(set(section) - allowed, key=str):
        errors.append(f"{where}{key}: unknown key")


def _int(value: Any, where: str, errors: list[str], minimum: int | None = None) -> int | None:
    if isinstance(value, bool) or not isinstance(value, int):
        errors.append(f"{where}: expected an integer, got {value!r}")
        return None
    if minimum is not None and value < minimum:
        errors.append(f"{where}: must be >= {minimum}, got {value}")
        return None
    return value


def _float(value: Any, where: str, errors: list[str], low: float | None = None, high: float | None = None,
           low_open: bool = False, high_open: bool = False) -> float | None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{where}: expected a number, got {value!r}")
        return None
    value = float(value)
    if low is not None and (value < low or (low_open and value == low)):
        errors.append(f"{where}: must be {'>' if low_open else '>='} {low}, got {value}")
        return None
    if high is not None and (value > high or (high_open and value == high)):
        errors.append(f"{where}: must be {'<' if high_open else '<='} {high}, got {value}")
        return None
    return value


def _section(raw: dict, key: str, errors: list[str]) -> dict:
    value = raw.get(key, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        errors.append(f"{key}: expected a mapping")
        return {}
    return value


def parse_config(text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Parse and validate a YAML config; raises ConfigError listing every problem."""
    try:
        raw = yaml.load(text, Loader=_UniqueKeyLoader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"invalid YAML: {exc}"]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping at the top level"])

    errors: list[str] = []
    _check_keys(raw, _TOP_KEYS, "", errors)
    out: dict[str, Any] = {}

    if "name" in raw:
        out["name"] = str(raw["name"])
    if "output_dir" in raw:
        out["output_dir"] = str(raw["output_dir"])
    for key, minimum in (("master_seed", 0), ("n_random_orders", 0), ("workers", 0)):
        if key in raw and (v := _int(raw[key], key, errors, minimum)) is not None:
            out[key] = v
    for key in ("tasks", "classes_per_task"):
        if key in raw and (v := _int(raw[key], key, errors, 2)) is not None:
            out[key] = v
    if "write_steps" in raw:
        if not isinstance(raw["write_steps"], bool):
            errors.append("write_steps: expected true or false")
        else:
            out["write_steps"] = raw["write_steps"]
    if "forgetting_convention" in raw:
        if raw["forgetting_convention"] not in FORGETTING_CONVENTIONS:
            errors.append(f"forgetting_convention: must be one of {list(FORGETTING_CONVENTIONS)}")
        else:
            out["forgetting_convention"] = raw["forgetting_convention"]

    network = _section(raw, "network", errors)
    _check_keys(network, {"block_widths"}, "network.", errors)
    widths = ExperimentConfig.block_widths
    if "block_widths" in network:
        bw = network["block_widths"]
        if not isinstance(bw, list) or not bw:
            errors.append("network.block_widths: expected a non-empty list")
        else:
            checked = [_int(w, f"network.block_widths[{i}]", errors, 1) for i, w in enumerate(bw)]
            if None not in checked:
                widths = tuple(checked)
                out["block_widths"] = widths

    if "regimes" in raw:
        regimes = raw["regimes"]
        if not isinstance(regimes, list) or not regimes:
            errors.append("regimes: expected a non-empty list of block counts")
        else:
            ok = []
            for i, k in enumerate(regimes):
                k = _int(k, f"regimes[{i}]", errors)
                if k is None:
                    continue
                if not 1 <= k <= len(widths):
                    errors.append(f"regimes[{i}]: {k} outside [1, {len(widths)}] (number of blocks)")
                elif k in ok:
                    errors.append(f"regimes[{i}]: duplicate regime {k}")
                else:
                    ok.append(k)
            out["regimes"] = tuple(sorted(ok))
    else:
        out["regimes"] = tuple(range(1, len(widths) + 1))

    methods = ExperimentConfig.methods
    if "methods" in raw:
        listed = raw["methods"]
        if not isinstance(listed, list) or not listed:
            errors.append("methods: expected a non-empty list")
        else:
            seen: list[str] = []
            for i, m in enumerate(listed):
                if m not in METHOD_NAMES:
                    errors.append(f"methods[{i}]: unknown method {m!r} (choose from {list(METHOD_NAMES)})")
                elif m in seen:
                    errors.append(f"methods[{i}]: duplicate method {m!r}")
                else:
                    seen.append(m)
            methods = tuple(seen)
            out["methods"] = methods

    params: dict[str, dict[str, float]] = {}
    for name, defaults in METHOD_DEFAULTS.items():
        section = _section(raw, name, errors)
        _check_keys(section, set(defaults), f"{name}.", errors)
        merged = dict(defaults)
        for key, value in section.items():
            if key not in defaults:
                continue
            where = f"{name}.{key}"
            if key == "memory_per_task":
                v = _int(value, where, errors, 1)
            elif key == "gamma":
                v = _float(value, where, errors, 0.0, 1.0, low_open=True)
            elif key in ("xi", "temperature"):
                v = _float(value, where, errors, 0.0, low_open=True)
            else:
                v = _float(value, where, errors, 0.0)
            if v is not None:
                merged[key] = v
        if name in methods:
            params[name] = merged
    out["method_params"] = params

    train = _section(raw, "train", errors)
    _check_keys(train, _TRAIN_KEYS, "train.", errors)
    if "eta" in train and (v := _float(train["eta"], "train.eta", errors, 0.0, low_open=True)) is not None:
        out["eta"] = v
    for key, minimum in (("epochs_per_task", 0), ("batch_size", 1)):
        if key in train and (v := _int(train[key], f"train.{key}", errors, minimum)) is not None:
            out[key] = v

    ds = _section(raw, "dataset", errors)
    kind = ds.get("kind", "synthetic")
    ds_out: dict[str, Any] = {"kind": kind}
    if kind == "synthetic":
        _check_keys(ds, _SYNTH_KEYS, "dataset.", errors)
        for key, minimum in (("dim", 1), ("n_per_class", 2)):
            if key in ds and (v := _int(ds[key], f"dataset.{key}", errors, minimum)) is not None:
                ds_out[key] = v
        if "separation" in ds and (v := _float(ds["separation"], "dataset.separation", errors, 0.0)) is not None:
            ds_out["separation"] = v
    elif kind == "idx":
        _check_keys(ds, _IDX_KEYS, "dataset.", errors)
        base = Path(base_dir) if base_dir is not None else None
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key in ds:
                path = Path(str(ds[key]))
                ds_out[key] = str(base / path if base is not None and not path.is_absolute() else path)
        for key in ("train_images", "train_labels"):
            if key not in ds:
                errors.append(f"dataset.{key}: required for idx datasets")
        if ("test_images" in ds) != ("test_labels" in ds):
            errors.append("dataset.test_images/test_labels: give both or neither")
        if "max_per_class" in ds and (v := _int(ds["max_per_class"], "dataset.max_per_class", errors, 2)) is not None:
            ds_out["max_per_class"] = v
    else:
        errors.append(f"dataset.kind: must be 'synthetic' or 'idx', got {kind!r}")
    if "test_fraction" in ds:
        v = _float(ds["test_fraction"], "dataset.test_fraction", errors, 0.0, 1.0, low_open=True, high_open=True)
        if v is not None:
            ds_out["test_fraction"] = v
    out["dataset"] = DatasetConfig(**ds_out) if kind in ("synthetic", "idx") else DatasetConfig()

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(**out)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)
