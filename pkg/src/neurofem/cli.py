"""Command-line driver: mesh, dataset, train, eval, bench, predict.

Every command reads one JSON config (see :mod:`neurofem.config`) plus the
shared flags --config/--seed/--threads/--out/--set. Input artifacts are
located through the config's ``paths`` section; --out overrides the
command's primary output path.

Exit codes: 0 success, 1 validation error, 2 input-consistency error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .fem import FemSystem
from .materials import make_material
from .mesh import MeshError, bounding_box_length, generate_beam_mesh, load_mesh, save_mesh
from .metrics import evaluate, evaluate_predictor, save_report
from .modal import (STREAM_BENCH, STREAM_EVAL, DatasetGenerationError,
                    eigendecompose, generate_dataset, load_dataset,
                    mask_patch, modal_force, sample_amplitudes, save_dataset)
from .network import load_model, make_predictor, predict, save_model
from .solver import (LinearSolveError, PredictionOutcome, SolverConfig,
                     hybrid_newton_raphson, newton_raphson)
from .training import TrainConfig, TrainingError, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONSISTENCY = 2
EXIT_NUMERICAL = 3


class ConsistencyError(RuntimeError):
    """Artifacts do not belong together (N or fingerprint mismatch)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are code 1
        raise ConfigError(message)


def _fingerprint(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _dataset_fingerprint(directory) -> str:
    digest = hashlib.sha256()
    for name in ("manifest.json", "forces.f64", "displacements.f64"):
        digest.update(_fingerprint(os.path.join(directory, name)).encode())
    return digest.hexdigest()


def _load_cfg(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    if args.set:
        cfg = cfgmod.apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfgmod.validate_config(cfg)
    return cfg


def _threads(args) -> int:
    if args.threads == 0:
        return os.cpu_count() or 1
    return max(1, args.threads)


def _solver_config(cfg) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(eps=s["eps"], eta=s["eta"], max_iters=s["max_iters"],
                        linear_solver=s["linear_solver"])


def _resolve_d_max(cfg, length: float) -> float:
    return cfg["d_max"] if cfg["d_max"] is not None else 0.15 * length


def _load_system(mesh_path, material_cfg):
    mesh = load_mesh(mesh_path)
    material = make_material(material_cfg["model"], material_cfg["young_modulus"],
                             material_cfg["poisson_ratio"])
    return FemSystem(mesh, material)


def _check_model_mesh(manifest, mesh_path, n_dofs):
    if manifest["N"] != n_dofs:
        raise ConsistencyError(
            f"model expects N={manifest['N']} dofs but mesh {mesh_path} has {n_dofs}")
    expected = manifest.get("mesh_fingerprint")
    if expected and expected != _fingerprint(mesh_path):
        raise ConsistencyError(
            f"mesh {mesh_path} does not match the fingerprint recorded in the model")


# -- commands -----------------------------------------------------------------

def cmd_mesh(args) -> int:
    cfg = _load_cfg(args)
    m = cfg["mesh"]
    mesh = generate_beam_mesh(m["nx"], m["ny"], m["nz"],
                              m["size_x"], m["size_y"], m["size_z"])
    out = args.out or cfg["paths"]["mesh"]
    save_mesh(mesh, out)
    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_tets} tets, N={mesh.n_dofs} dofs, "
          f"L={bounding_box_length(mesh):.6g} m, {len(mesh.fixed_nodes)} fixed nodes "
          f"-> {out}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    cfg = _load_cfg(args)
    system = _load_system(cfg["paths"]["mesh"], cfg["material"])
    length = bounding_box_length(system.mesh)
    basis = eigendecompose(system, cfg["modes"])
    print("eigenvalues:", " ".join(f"{v:.6g}" for v in basis.lam))
    d_max = _resolve_d_max(cfg, length)
    dataset = generate_dataset(system, basis, cfg["samples"], d_max,
                               cfg["patch_prob"], cfg["seed"],
                               _solver_config(cfg), workers=_threads(args))
    out = args.out or cfg["paths"]["dataset"]
    save_dataset(dataset, out)
    print(f"dataset: kept {dataset.n_samples}/{cfg['samples']} samples, "
          f"c={dataset.residual_norm_const:.6g} N, d_max={d_max:.6g} m -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = args.out or cfg["paths"]["model"]
    if os.path.exists(os.path.join(out, "manifest.json")):
        raise ConfigError(
            f"model already exists at {out}; resuming is not supported "
            "(delete it or pick a new --out)")
    dataset_dir = cfg["paths"]["dataset"]
    dataset = load_dataset(dataset_dir)
    t = cfg["train"]
    train_config = TrainConfig(loss=t["loss"], epochs=t["epochs"], batch_size=t["batch_size"],
                               lr=t["lr"], beta1=t["beta1"], beta2=t["beta2"],
                               eps_adam=t["eps_adam"], seed=cfg["seed"],
                               validation_fraction=t["validation_fraction"],
                               hidden_layers=t["hidden_layers"])
    tic = time.perf_counter()
    result = train(dataset, train_config)
    wall = time.perf_counter() - tic

    extra = {
        "train_config": vars(train_config).copy(),
        "dataset_fingerprint": _dataset_fingerprint(dataset_dir),
        "mesh_fingerprint": _fingerprint(os.path.join(dataset_dir, "mesh.json")),
        "residual_norm_const": dataset.residual_norm_const,
        "d_max": dataset.d_max,
        "patch_prob": dataset.patch_prob,
        "modes": dataset.modes_used,
        "material": dataset.material.to_dict(),
    }
    save_model(result.network, result.norm, out, extra)
    history_path = cfg["paths"]["history"]
    with open(history_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "mean_rho", "wall_time"])
        for row in result.history:
            writer.writerow([row.epoch, f"{row.train_loss:.12e}", f"{row.val_loss:.12e}",
                             f"{row.mean_rho:.12e}", f"{row.wall_time:.6f}"])
    last = result.history[-1]
    print(f"train: {t['loss']} loss, {len(result.history)} epochs in {wall:.1f} s, "
          f"final train={last.train_loss:.3e} val={last.val_loss:.3e} "
          f"rho={last.mean_rho:.3e} -> {out}, history -> {history_path}")
    return EXIT_OK


def fresh_force(system, basis, d_max, patch_prob, stream_key):
    """One in-distribution force from its own random stream."""
    length = bounding_box_length(system.mesh)
    rng = np.random.default_rng(stream_key)
    while True:
        alpha = sample_amplitudes(basis, d_max, rng)
        f = modal_force(basis, alpha)
        if rng.random() < patch_prob:
            center = int(system.mesh.surface_nodes[rng.integers(len(system.mesh.surface_nodes))])
            radius = rng.uniform(0.1, 0.5) * length
            f = mask_patch(f, system.mesh, center, radius)
        if np.linalg.norm(f) > 0:
            return f


def fresh_forces(system, basis, count, d_max, patch_prob, seed, stream):
    """In-distribution forces from streams disjoint from the dataset's."""
    return np.array([fresh_force(system, basis, d_max, patch_prob, [stream, seed, i])
                     for i in range(count)])


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    net, norm, manifest = load_model(cfg["paths"]["model"])
    mesh_path = cfg["paths"]["mesh"]
    system = _load_system(mesh_path, cfg["material"])
    _check_model_mesh(manifest, mesh_path, system.n_dofs)
    solver_config = _solver_config(cfg)

    basis = eigendecompose(system, manifest.get("modes", cfg["modes"]))
    d_max = manifest.get("d_max") or _resolve_d_max(cfg, norm.length)
    patch_prob = manifest.get("patch_prob", cfg["patch_prob"])
    forces = fresh_forces(system, basis, cfg["eval"]["samples"], d_max,
                          patch_prob, cfg["seed"], STREAM_EVAL)

    if args.oracle:
        # Replace the network by the solver itself: predictions equal truth.
        def predictor(f):
            return newton_raphson(system, f, solver_config).u

        report = evaluate_predictor(predictor, norm, system, forces, solver_config,
                                    manifest.get("residual_norm_const"))
    else:
        report = evaluate(net, norm, system, forces, solver_config,
                          residual_scale=manifest.get("residual_norm_const"))
    out = args.out or cfg["paths"]["report"]
    save_report(report, out)
    print(f"eval: S={len(report.samples)} (excluded {len(report.excluded)}), "
          f"e_max={report.e_max:.6e}, e_mean={report.e_mean:.6e}, "
          f"snr_min={report.snr_min_db:.3f} dB, mse_scaled={report.mse_scaled:.6e} -> {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    net, norm, manifest = load_model(cfg["paths"]["model"])
    mesh_path = cfg["paths"]["mesh"]
    system = _load_system(mesh_path, cfg["material"])
    _check_model_mesh(manifest, mesh_path, system.n_dofs)
    solver_config = _solver_config(cfg)

    basis = eigendecompose(system, manifest.get("modes", cfg["modes"]))
    length = bounding_box_length(system.mesh)
    train_d_max = manifest.get("d_max") or _resolve_d_max(cfg, length)
    patch_prob = cfg["bench"]["patch_prob"]
    if patch_prob is None:
        patch_prob = manifest.get("patch_prob", cfg["patch_prob"])
    factors = cfg["bench"]["d_max_factors"]
    d_values = [train_d_max] if factors is None else [f * length for f in factors]

    count = cfg["bench"]["samples"]
    if args.oracle:
        def predictor(f):
            return newton_raphson(system, f, solver_config).u
    else:
        predictor = make_predictor(net, norm, system.fixed_dofs)

    rows = []
    for i in range(count):
        d_max = d_values[i % len(d_values)]
        force = fresh_force(system, basis, d_max, patch_prob,
                            [STREAM_BENCH, cfg["seed"], i])
        classic = newton_raphson(system, force, solver_config)
        hybrid = hybrid_newton_raphson(system, force, predictor, solver_config)
        rows.append({
            "idx": i,
            "force_norm": float(np.linalg.norm(force)),
            "d_max": d_max,
            "classic_iters": classic.iterations,
            "hybrid_iters": hybrid.iterations,
            "hybrid_outcome": hybrid.prediction_used.value,
            "classic_converged": classic.converged,
            "hybrid_converged": hybrid.converged,
        })

    both = [r for r in rows if r["classic_converged"] and r["hybrid_converged"]]
    mean_classic = float(np.mean([r["classic_iters"] for r in both])) if both else float("nan")
    mean_hybrid = float(np.mean([r["hybrid_iters"] for r in both])) if both else float("nan")
    reduction = (100.0 * (1.0 - mean_hybrid / mean_classic)
                 if both and mean_classic > 0 else 0.0)
    outcome_pct = {
        kind.value: 100.0 * sum(r["hybrid_outcome"] == kind.value for r in rows) / len(rows)
        for kind in (PredictionOutcome.EARLY_EXIT, PredictionOutcome.FALLBACK,
                     PredictionOutcome.DISCARDED)
    }
    report = {
        "rows": rows,
        "aggregates": {
            "samples": len(rows),
            "mean_classic_iters": mean_classic,
            "mean_hybrid_iters": mean_hybrid,
            "mean_iteration_reduction_pct": reduction,
            "classic_convergence_rate": float(np.mean([r["classic_converged"] for r in rows])),
            "hybrid_convergence_rate": float(np.mean([r["hybrid_converged"] for r in rows])),
            "pct_hybrid_leq_classic": 100.0 * float(np.mean(
                [r["hybrid_iters"] <= r["classic_iters"] for r in both])) if both else 0.0,
            "early_exit_pct": outcome_pct["early_exit"],
            "fallback_pct": outcome_pct["fallback"],
            "discarded_pct": outcome_pct["discarded"],
        },
    }
    out = args.out or cfg["paths"]["bench_report"]
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    agg = report["aggregates"]
    print(f"bench: {len(rows)} forces, classic {agg['mean_classic_iters']:.2f} iters vs "
          f"hybrid {agg['mean_hybrid_iters']:.2f} "
          f"({agg['mean_iteration_reduction_pct']:.1f}% reduction), "
          f"early-exit {agg['early_exit_pct']:.0f}%, fallback {agg['fallback_pct']:.0f}%, "
          f"discarded {agg['discarded_pct']:.0f}% -> {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_cfg(args)
    net, norm, manifest = load_model(cfg["paths"]["model"])
    with open(cfg["paths"]["force"], "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    force = np.asarray(doc.get("force"), dtype=np.float64)
    if force.ndim != 1 or force.shape[0] != manifest["N"]:
        raise ConsistencyError(
            f"force file must hold a flat vector of length {manifest['N']}")
    fixed = None
    mesh_path = cfg["paths"]["mesh"]
    if os.path.exists(mesh_path):
        system = _load_system(mesh_path, cfg["material"])
        _check_model_mesh(manifest, mesh_path, system.n_dofs)
        fixed = system.fixed_dofs
    tic = time.perf_counter()
    u = predict(net, norm, force, fixed)
    ms = (time.perf_counter() - tic) * 1e3
    out = args.out or cfg["paths"]["displacement"]
    with open(out, "w", encoding="utf-8") as fh:
        json.dump({"displacement": [float(x) for x in u], "predict_ms": ms}, fh)
        fh.write("\n")
    print(f"predict: |u|_inf = {np.abs(u).max():.6e} m in {ms:.3f} ms -> {out}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neurofem",
                     description="Neural surrogates for nonlinear static FEM")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "mesh": (cmd_mesh, "generate a clamped beam mesh"),
        "dataset": (cmd_dataset, "generate a modal-force training set"),
        "train": (cmd_train, "train the surrogate network"),
        "eval": (cmd_eval, "evaluate predictions against fresh solves"),
        "bench": (cmd_bench, "compare classic vs hybrid Newton-Raphson"),
        "predict": (cmd_predict, "predict the displacement for one force file"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=1, help="worker count (0 = auto)")
        p.add_argument("--out", default=None, help="primary output path")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config value (repeatable)")
        if name in ("eval", "bench"):
            p.add_argument("--oracle", action="store_true",
                           help="replace the network by the exact solver")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (MeshError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except (DatasetGenerationError, LinearSolveError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
