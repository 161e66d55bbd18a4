"""Loss functions, Adam, and the training loop.

Three losses are supported. Plain MSE is purely geometric. The two
residual-aware variants rescale or shift it by the normalized equilibrium
residual rho = norm(R(u)) / c, where R is evaluated on the de-normalized
prediction in physical units and c is the dataset's force-norm constant:

    additive:       loss = MSE + rho,   grad = grad(MSE)
    multiplicative: loss = MSE * rho,   grad = rho * grad(MSE)

In both cases rho is treated as a constant during differentiation. The
multiplicative form therefore scales every sample's gradient by how far that
sample is from equilibrium, which is the variant used by default.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fem import FemSystem
from .materials import InvertedElementError
from .modal import Dataset
from .network import Gradients, Network, NormalizationSpec, backward, forward, init_network

LOSS_KINDS = ("mse", "lr_add", "lr_mul")


class TrainingError(RuntimeError):
    """Non-finite loss or invalid training setup."""


def mse(u: np.ndarray, v: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over components and its gradient wrt u."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    d = u - v
    n = u.shape[-1]
    return float(d @ d) / n, 2.0 * d / n


def _to_physical(u_scaled: np.ndarray, norm: NormalizationSpec,
                 fixed_dofs: np.ndarray) -> np.ndarray:
    u_phys = norm.unstandardize_displacement(u_scaled)
    if len(fixed_dofs):
        u_phys[..., fixed_dofs] = 0.0
    return u_phys


def residual_factor(u_scaled, f_ext, system: FemSystem, norm: NormalizationSpec,
                    c: float) -> float:
    """rho = norm(R(u_phys)) / c for one sample, in physical units."""
    if c <= 0:
        raise ValueError("residual normalization constant must be positive")
    u_phys = _to_physical(u_scaled, norm, system.fixed_dofs)
    r = system.residual(u_phys, f_ext)
    return float(np.linalg.norm(r)) / c


def loss_residual_mul(u_scaled, v_scaled, f_ext, system, norm, c):
    """Multiplicative residual loss: (MSE * rho, rho * grad(MSE), rho)."""
    base, grad = mse(u_scaled, v_scaled)
    rho = residual_factor(u_scaled, f_ext, system, norm, c)
    return base * rho, rho * grad, rho


def loss_residual_add(u_scaled, v_scaled, f_ext, system, norm, c):
    """Additive residual loss: (MSE + rho, grad(MSE), rho)."""
    base, grad = mse(u_scaled, v_scaled)
    rho = residual_factor(u_scaled, f_ext, system, norm, c)
    return base + rho, grad, rho


def batch_residual_factors(u_scaled_batch, f_ext_batch, system: FemSystem,
                           norm: NormalizationSpec, c: float) -> np.ndarray:
    """Vectorized rho for a batch; non-evaluable samples come back as NaN."""
    u_phys = _to_physical(u_scaled_batch, norm, system.fixed_dofs)
    try:
        r = system.residual(u_phys, f_ext_batch)
        return np.linalg.norm(r, axis=-1) / c
    except InvertedElementError:
        pass
    out = np.empty(u_phys.shape[0])
    for s in range(u_phys.shape[0]):
        try:
            out[s] = np.linalg.norm(system.residual(u_phys[s], f_ext_batch[s])) / c
        except InvertedElementError:
            out[s] = np.nan
    return out


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_parameters(cls, params):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr=1e-4, beta1=0.9, beta2=0.999,
              eps_adam=1e-8) -> None:
    """One Adam update, in place, with the usual bias correction."""
    state.t += 1
    corr1 = 1.0 - beta1 ** state.t
    corr2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps_adam)


# -- training loop ------------------------------------------------------------

@dataclass
class TrainConfig:
    loss: str = "lr_mul"
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1
    hidden_layers: int = 3

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation fraction must be in [0, 1)")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    mean_rho: float      # mean validation rho (NaN without a validation split)
    wall_time: float


@dataclass
class TrainResult:
    network: Network
    norm: NormalizationSpec
    history: list[EpochStats] = field(default_factory=list)
    skipped_samples: int = 0


def _split_indices(n_samples: int, fraction: float, rng: np.random.Generator):
    order = rng.permutation(n_samples)
    n_val = int(round(fraction * n_samples))
    return order[n_val:], order[:n_val]


def _eval_losses(net, x, v, f_ext, kind, system, norm, c):
    """Per-sample losses and rhos on a fixed set, without gradients."""
    y, _ = forward(net, x)
    per = ((y - v) ** 2).mean(axis=1)
    if kind == "mse":
        rho = batch_residual_factors(y, f_ext, system, norm, c)
        return per, rho
    rho = batch_residual_factors(y, f_ext, system, norm, c)
    adjusted = per * rho if kind == "lr_mul" else per + rho
    return adjusted, rho


def train(dataset: Dataset, config: TrainConfig | None = None,
          system: FemSystem | None = None) -> TrainResult:
    """Mini-batch Adam over the dataset; returns the best-validation network.

    Inputs are standardized forces, targets standardized L-scaled
    displacements. Per-sample losses are accumulated in sample order so the
    reported epoch loss is independent of batching; shuffling is reseeded per
    epoch from the config seed, making single-threaded runs bit-reproducible.
    """
    config = config or TrainConfig()
    if dataset.n_samples < 1:
        raise TrainingError("dataset is empty")
    system = system or FemSystem(dataset.mesh, dataset.material)
    norm = NormalizationSpec(dataset.force_mean, dataset.force_std,
                             dataset.disp_mean, dataset.disp_std, dataset.length)
    c = dataset.residual_norm_const

    x = norm.standardize_force(dataset.forces)
    v = norm.standardize_displacement(dataset.displacements)
    n = dataset.forces.shape[1]

    net = init_network(n, config.hidden_layers, seed=config.seed)
    params = net.parameters()
    state = AdamState.for_parameters(params)

    split_rng = np.random.default_rng([config.seed, 1])
    train_idx, val_idx = _split_indices(dataset.n_samples, config.validation_fraction, split_rng)
    if len(train_idx) == 0:
        raise TrainingError("validation split leaves no training samples")

    needs_rho = config.loss != "mse"
    best_val = np.inf
    best_params = None
    history = []
    skipped = 0

    for epoch in range(config.epochs):
        tic = time.perf_counter()
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(train_idx)
        sample_losses = np.full(dataset.n_samples, np.nan)

        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, vb, fb = x[idx], v[idx], dataset.forces[idx]
            yb, cache = forward(net, xb)
            diff = yb - vb
            per_mse = (diff ** 2).mean(axis=1)
            weight = np.ones(len(idx))
            per_loss = per_mse
            if needs_rho:
                rho = batch_residual_factors(yb, fb, system, norm, c)
                bad = ~np.isfinite(rho)
                if np.any(bad):
                    skipped += int(bad.sum())
                    warnings.warn(f"skipped {int(bad.sum())} sample(s) with "
                                  "non-evaluable residual in epoch "
                                  f"{epoch}", RuntimeWarning)
                    rho = np.where(bad, 0.0, rho)
                    weight = np.where(bad, 0.0, weight)
                if config.loss == "lr_mul":
                    weight = weight * rho
                    per_loss = per_mse * rho
                else:
                    per_loss = per_mse + rho
                per_loss = np.where(bad, np.nan, per_loss) if np.any(bad) else per_loss
            sample_losses[idx] = per_loss

            batch_loss = np.nanmean(per_loss) if np.any(~np.isfinite(per_loss)) else per_loss.mean()
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss in epoch {epoch}, batch starting at {start}")
            grad_y = (2.0 / (n * len(idx))) * weight[:, None] * diff
            grads = backward(net, cache, grad_y)
            adam_step(params, grads.parameters(), state, config.lr,
                      config.beta1, config.beta2, config.eps_adam)

        train_loss = float(np.nanmean(sample_losses[train_idx]))
        if len(val_idx):
            val_per, val_rho = _eval_losses(net, x[val_idx], v[val_idx],
                                            dataset.forces[val_idx],
                                            config.loss, system, norm, c)
            val_loss = float(np.nanmean(val_per))
            mean_rho = float(np.nanmean(val_rho))
        else:
            val_loss, mean_rho = np.nan, np.nan
        history.append(EpochStats(epoch, train_loss, val_loss,
                                  mean_rho, time.perf_counter() - tic))

        track = val_loss if len(val_idx) else train_loss
        if np.isfinite(track) and track < best_val:
            best_val = track
            best_params = [p.copy() for p in params]

    if best_params is not None:
        for p, b in zip(params, best_params):
            p[...] = b
    return TrainResult(network=net, norm=norm, history=history, skipped_samples=skipped)
