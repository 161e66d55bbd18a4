"""Run configuration: defaults, JSON loading, validation, --set overrides.

A single nested JSON document drives every CLI command so an experiment is
reproducible from one artifact. User files are merged over the defaults
below; keys that the defaults do not know are rejected. Values of ``None``
mean "derive automatically" where noted.
"""

from __future__ import annotations

import copy
import json


class ConfigError(ValueError):
    """Invalid configuration file, key, or value."""


DEFAULT_CONFIG = {
    "mesh": {
        "nx": 2, "ny": 2, "nz": 10,
        "size_x": 2.0, "size_y": 0.2, "size_z": 0.2,
    },
    "material": {
        "model": "stvk",
        "young_modulus": 1.0e5,
        "poisson_ratio": 0.4,
    },
    "modes": 5,
    "samples": 1000,
    "d_max": None,          # meters; None -> 0.15 * L
    "patch_prob": 0.5,
    "solver": {
        "eps": 1.0e-6,
        "eta": None,        # meters; None -> 1e-9 * L
        "max_iters": 30,
        "linear_solver": "direct",
    },
    "train": {
        "loss": "lr_mul",
        "epochs": 200,
        "batch_size": 32,
        "lr": 1.0e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_adam": 1.0e-8,
        "validation_fraction": 0.1,
        "hidden_layers": 3,
    },
    "eval": {
        "samples": 100,
    },
    "bench": {
        "samples": 100,
        "d_max_factors": [0.01, 0.10, 0.25],  # None -> the training d_max
        "patch_prob": None,                   # None -> the training patch_prob
    },
    "paths": {
        "mesh": "mesh.json",
        "dataset": "dataset",
        "model": "model",
        "report": "report.json",
        "history": "history.csv",
        "bench_report": "bench.json",
        "force": "force.json",
        "displacement": "displacement.json",
    },
    "seed": 0,
}

def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, prefix=f"{path}.")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    """Defaults, optionally overlaid with a JSON file (partial files are fine)."""
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return _merge(cfg, user)


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply repeatable --set key.path=value flags (values parsed as JSON,
    falling back to a bare string)."""
    cfg = copy.deepcopy(cfg)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(node[leaf], dict):
            raise ConfigError(f"config key {key!r} is a section, not a value")
        node[leaf] = value
    return cfg


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: dict) -> dict:
    """Type- and range-check every field; returns cfg for chaining."""
    mesh = cfg["mesh"]
    for key in ("nx", "ny", "nz"):
        _expect(isinstance(mesh[key], int) and mesh[key] >= 1,
                f"mesh.{key} must be an integer >= 1")
    for key in ("size_x", "size_y", "size_z"):
        _expect(isinstance(mesh[key], (int, float)) and mesh[key] > 0,
                f"mesh.{key} must be positive")
    mat = cfg["material"]
    _expect(mat["model"] in ("stvk", "neohookean"),
            "material.model must be 'stvk' or 'neohookean'")
    _expect(mat["young_modulus"] > 0, "material.young_modulus must be positive")
    _expect(0 <= mat["poisson_ratio"] < 0.5, "material.poisson_ratio must be in [0, 0.5)")
    _expect(isinstance(cfg["modes"], int) and cfg["modes"] >= 1, "modes must be an integer >= 1")
    _expect(isinstance(cfg["samples"], int) and cfg["samples"] >= 1,
            "samples must be an integer >= 1")
    _expect(cfg["d_max"] is None or cfg["d_max"] > 0, "d_max must be positive or null")
    _expect(0 <= cfg["patch_prob"] <= 1, "patch_prob must be in [0, 1]")
    sol = cfg["solver"]
    _expect(sol["eps"] > 0, "solver.eps must be positive")
    _expect(sol["eta"] is None or sol["eta"] > 0, "solver.eta must be positive or null")
    _expect(isinstance(sol["max_iters"], int) and sol["max_iters"] >= 1,
            "solver.max_iters must be an integer >= 1")
    _expect(sol["linear_solver"] in ("direct", "cg"),
            "solver.linear_solver must be 'direct' or 'cg'")
    tr = cfg["train"]
    _expect(tr["loss"] in ("mse", "lr_add", "lr_mul"),
            "train.loss must be one of mse, lr_add, lr_mul")
    for key in ("epochs", "batch_size", "hidden_layers"):
        _expect(isinstance(tr[key], int) and tr[key] >= 1,
                f"train.{key} must be an integer >= 1")
    _expect(tr["lr"] > 0, "train.lr must be positive")
    _expect(0 <= tr["validation_fraction"] < 1,
            "train.validation_fraction must be in [0, 1)")
    _expect(isinstance(cfg["eval"]["samples"], int) and cfg["eval"]["samples"] >= 1,
            "eval.samples must be an integer >= 1")
    bench = cfg["bench"]
    _expect(isinstance(bench["samples"], int) and bench["samples"] >= 1,
            "bench.samples must be an integer >= 1")
    if bench["d_max_factors"] is not None:
        _expect(isinstance(bench["d_max_factors"], list) and bench["d_max_factors"]
                and all(isinstance(v, (int, float)) and v > 0 for v in bench["d_max_factors"]),
                "bench.d_max_factors must be a non-empty list of positive numbers or null")
    if bench["patch_prob"] is not None:
        _expect(0 <= bench["patch_prob"] <= 1, "bench.patch_prob must be in [0, 1] or null")
    _expect(isinstance(cfg["seed"], int) and cfg["seed"] >= 0,
            "seed must be a non-negative integer")
    for key, value in cfg["paths"].items():
        _expect(isinstance(value, str) and value, f"paths.{key} must be a non-empty string")
    return cfg
