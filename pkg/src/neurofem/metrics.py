"""Evaluation metrics over sets of predicted vs. solved displacement fields.

All metric kernels expect inputs already scaled by the characteristic length
(the evaluate driver divides by L), making them dimensionless:

  e_max    worst per-node 3-component error over all samples
  e_mean   sum of per-sample whole-vector errors divided by N * S
  snr_min  worst-sample 10*log10(norm(prediction) / norm(error)) in dB

Exact matches map snr to +inf and a zero prediction with nonzero error to
-inf, so the minimum over samples stays well defined.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .fem import FemSystem
from .network import Network, NormalizationSpec, predict
from .solver import SolverConfig, newton_raphson


def _check_pair(preds, truths):
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.ndim != 2:
        raise ValueError(f"expected matching (S, N) arrays, got {preds.shape} vs {truths.shape}")
    if preds.shape[1] % 3 != 0:
        raise ValueError("N must be a multiple of 3 (three dofs per node)")
    return preds, truths


def node_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-node Euclidean error of a single sample."""
    d = (np.asarray(pred) - np.asarray(truth)).reshape(-1, 3)
    return np.linalg.norm(d, axis=1)


def e_max(preds: np.ndarray, truths: np.ndarray) -> float:
    """Largest per-node error across all samples."""
    preds, truths = _check_pair(preds, truths)
    d = (preds - truths).reshape(preds.shape[0], -1, 3)
    return float(np.linalg.norm(d, axis=2).max())


def e_mean(preds: np.ndarray, truths: np.ndarray) -> float:
    """Sum of per-sample vector errors over N * S (literal formula)."""
    preds, truths = _check_pair(preds, truths)
    s, n = preds.shape
    return float(np.linalg.norm(preds - truths, axis=1).sum() / (n * s))


def snr_db(pred: np.ndarray, truth: np.ndarray) -> float:
    """Signal-to-noise of one sample; the prediction norm is the signal."""
    err = float(np.linalg.norm(np.asarray(pred) - np.asarray(truth)))
    sig = float(np.linalg.norm(pred))
    if err == 0.0:
        return math.inf
    if sig == 0.0:
        return -math.inf
    return 10.0 * math.log10(sig / err)


def snr_min(preds: np.ndarray, truths: np.ndarray) -> float:
    preds, truths = _check_pair(preds, truths)
    return min(snr_db(p, t) for p, t in zip(preds, truths))


@dataclass
class SampleMetrics:
    idx: int
    node_err_max: float
    vec_err: float
    snr_db: float
    residual_norm: float
    predict_ms: float
    nr_iters_classic: int


@dataclass
class EvaluationReport:
    e_max: float
    e_mean: float
    snr_min_db: float
    mse_scaled: float                 # mean over samples of per-sample MSE on u/L
    samples: list[SampleMetrics] = field(default_factory=list)
    excluded: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "e_max": self.e_max,
            "e_mean": self.e_mean,
            "snr_min_db": _encode_inf(self.snr_min_db),
            "mse_scaled": self.mse_scaled,
            "samples": [{
                "idx": s.idx,
                "node_err_max": s.node_err_max,
                "vec_err": s.vec_err,
                "snr_db": _encode_inf(s.snr_db),
                "residual_norm": s.residual_norm,
                "predict_ms": s.predict_ms,
                "nr_iters_classic": s.nr_iters_classic,
            } for s in self.samples],
            "excluded": list(self.excluded),
        }


def _encode_inf(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def save_report(report: EvaluationReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def evaluate(net: Network, norm: NormalizationSpec, system: FemSystem,
             forces: np.ndarray, solver_config: SolverConfig | None = None,
             residual_scale: float | None = None) -> EvaluationReport:
    """Compare network predictions against classic Newton-Raphson solutions.

    Each force is solved for ground truth; non-converged solves are excluded
    and listed. Predictions and truths are scaled by the bounding-box length
    before any metric. residual_norm is norm(R(prediction)) divided by
    residual_scale when given (use the dataset constant c for rho).
    """
    def predictor(f):
        return predict(net, norm, f, system.fixed_dofs)

    return evaluate_predictor(predictor, norm, system, forces, solver_config,
                              residual_scale)


def evaluate_predictor(predictor, norm: NormalizationSpec, system: FemSystem,
                       forces: np.ndarray, solver_config: SolverConfig | None = None,
                       residual_scale: float | None = None) -> EvaluationReport:
    """evaluate() for any force -> displacement callable (e.g. an oracle)."""
    solver_config = solver_config or SolverConfig()
    forces = np.asarray(forces, dtype=np.float64)
    if forces.ndim != 2 or forces.shape[1] != system.n_dofs:
        raise ValueError(f"forces must have shape (S, {system.n_dofs})")
    length = norm.length

    rows = []
    preds_scaled, truths_scaled = [], []
    excluded = []
    for idx, f in enumerate(forces):
        result = newton_raphson(system, f, solver_config)
        if not result.converged:
            excluded.append(idx)
            continue
        tic = time.perf_counter()
        u_p = np.asarray(predictor(f), dtype=np.float64)
        predict_ms = (time.perf_counter() - tic) * 1e3
        r_norm = float(np.linalg.norm(system.residual(u_p, f)))
        if residual_scale is not None:
            r_norm /= residual_scale
        ps, ts = u_p / length, result.u / length
        preds_scaled.append(ps)
        truths_scaled.append(ts)
        rows.append(SampleMetrics(
            idx=idx,
            node_err_max=float(node_errors(ps, ts).max()),
            vec_err=float(np.linalg.norm(ps - ts)),
            snr_db=snr_db(ps, ts),
            residual_norm=r_norm,
            predict_ms=predict_ms,
            nr_iters_classic=result.iterations,
        ))
    if not rows:
        raise RuntimeError("no ground-truth solve converged; nothing to evaluate")
    preds = np.array(preds_scaled)
    truths = np.array(truths_scaled)
    return EvaluationReport(
        e_max=e_max(preds, truths),
        e_mean=e_mean(preds, truths),
        snr_min_db=snr_min(preds, truths),
        mse_scaled=float(((preds - truths) ** 2).mean(axis=1).mean()),
        samples=rows,
        excluded=excluded,
    )
