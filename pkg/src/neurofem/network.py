"""Fully connected surrogate network with learnable PReLU activations.

The network maps a standardized external force vector to a standardized,
length-scaled displacement vector. All layers have the same width as the
dof count N; hidden layers apply a per-neuron PReLU, the output layer is
affine. At the default depth of three hidden layers the parameter count is
4N^2 + 7N (four weight matrices, four biases, three slope vectors).

Forward and backward passes are hand-written on numpy arrays: inputs may be
single vectors or (batch, N) matrices, and gradients are exact (summed over
the batch).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

MODEL_FORMAT_VERSION = 1


def prelu(x, a):
    """PReLU(x) = x for x >= 0, a*x otherwise; elementwise."""
    return np.where(x >= 0, x, a * x)


def prelu_grads(x, a):
    """(d/dx, d/da) of PReLU; at x = 0 the non-negative branch applies."""
    pos = x >= 0
    return np.where(pos, 1.0, a), np.where(pos, 0.0, x)


@dataclass(frozen=True)
class NormalizationSpec:
    """Dataset statistics that make network inputs and outputs O(1).

    Forces are standardized by (force_mean, force_std); displacements are
    divided by the bounding-box length and standardized by (disp_mean,
    disp_std). Both transforms are global scalars, hence exactly invertible.
    """

    force_mean: float
    force_std: float
    disp_mean: float
    disp_std: float
    length: float

    def standardize_force(self, f):
        return (np.asarray(f, dtype=np.float64) - self.force_mean) / self.force_std

    def standardize_displacement(self, u):
        return (np.asarray(u, dtype=np.float64) / self.length - self.disp_mean) / self.disp_std

    def unstandardize_displacement(self, y):
        return (np.asarray(y, dtype=np.float64) * self.disp_std + self.disp_mean) * self.length

    def to_dict(self):
        return {"force_mean": self.force_mean, "force_std": self.force_std,
                "disp_mean": self.disp_mean, "disp_std": self.disp_std,
                "length": self.length}

    @classmethod
    def from_dict(cls, d):
        return cls(d["force_mean"], d["force_std"], d["disp_mean"], d["disp_std"], d["length"])


class Network:
    """Plain container for weights, biases and PReLU slopes.

    weights[i] has shape (width_out, width_in); hidden layers 0..n_hidden-1
    carry a slope vector each; the last weight/bias pair is the affine
    output layer.
    """

    def __init__(self, weights, biases, slopes):
        if len(weights) != len(biases) or len(slopes) != len(weights) - 1:
            raise ValueError("layer structure mismatch")
        self.weights = weights
        self.biases = biases
        self.slopes = slopes

    @property
    def n_hidden(self) -> int:
        return len(self.slopes)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        """Canonical flat order: W_1, b_1, a_1, ..., W_out, b_out."""
        params = []
        for i in range(self.n_hidden):
            params.extend([self.weights[i], self.biases[i], self.slopes[i]])
        params.extend([self.weights[-1], self.biases[-1]])
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights],
                       [b.copy() for b in self.biases],
                       [a.copy() for a in self.slopes])


def init_network(n: int, hidden_layers: int = 3, seed: int = 0) -> Network:
    """He-normal weights, zero biases, PReLU slopes 0.25; deterministic."""
    if n < 1 or hidden_layers < 1:
        raise ValueError("need n >= 1 and at least one hidden layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for _ in range(hidden_layers + 1):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / n), size=(n, n)))
        biases.append(np.zeros(n))
    slopes = [np.full(n, 0.25) for _ in range(hidden_layers)]
    return Network(weights, biases, slopes)


def forward(net: Network, x: np.ndarray):
    """Evaluate the network; returns (y, cache) with cache for backward().

    x may be a vector (N,) or a batch (B, N); y matches the input shape.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    z = x[None, :] if single else x
    if z.shape[1] != net.weights[0].shape[1]:
        raise ValueError(f"input width {z.shape[1]} != {net.weights[0].shape[1]}")
    inputs, preacts = [], []
    for i in range(net.n_hidden):
        inputs.append(z)
        h = z @ net.weights[i].T + net.biases[i]
        preacts.append(h)
        z = prelu(h, net.slopes[i])
    inputs.append(z)
    y = z @ net.weights[-1].T + net.biases[-1]
    cache = (inputs, preacts)
    return (y[0] if single else y), cache


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slopes: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for i in range(len(self.slopes)):
            params.extend([self.weights[i], self.biases[i], self.slopes[i]])
        params.extend([self.weights[-1], self.biases[-1]])
        return params


def backward(net: Network, cache, grad_y: np.ndarray) -> Gradients:
    """Exact gradients of sum_b <y_b, grad_y_b> for every parameter."""
    inputs, preacts = cache
    gy = np.asarray(grad_y, dtype=np.float64)
    if gy.ndim == 1:
        gy = gy[None, :]
    if gy.shape != (inputs[-1].shape[0], net.weights[-1].shape[0]):
        raise ValueError("grad_y shape does not match the cached forward pass")

    gw = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    ga = [None] * len(net.slopes)

    gw[-1] = gy.T @ inputs[-1]
    gb[-1] = gy.sum(axis=0)
    gz = gy @ net.weights[-1]
    for i in reversed(range(net.n_hidden)):
        dx, da = prelu_grads(preacts[i], net.slopes[i])
        gh = gz * dx
        ga[i] = (gz * da).sum(axis=0)
        gw[i] = gh.T @ inputs[i]
        gb[i] = gh.sum(axis=0)
        gz = gh @ net.weights[i]
    return Gradients(gw, gb, ga)


def predict(net: Network, norm: NormalizationSpec, f_ext: np.ndarray,
            fixed_dofs: np.ndarray | None = None) -> np.ndarray:
    """Full inference pipeline: standardize, evaluate, unstandardize, rescale
    to meters, and zero the clamped dofs."""
    y, _ = forward(net, norm.standardize_force(f_ext))
    u = norm.unstandardize_displacement(y)
    if fixed_dofs is not None and len(fixed_dofs):
        u[..., fixed_dofs] = 0.0
    return u


def make_predictor(net: Network, norm: NormalizationSpec,
                   fixed_dofs: np.ndarray | None = None):
    """Bind a network into the f_ext -> displacement callable the hybrid
    Newton-Raphson solver expects."""
    def predictor(f_ext):
        return predict(net, norm, f_ext, fixed_dofs)
    return predictor


# -- serialization ----------------------------------------------------------

def save_model(net: Network, norm: NormalizationSpec, directory, extra: dict | None = None) -> None:
    """Write manifest.json plus params.f64 (canonical parameter order)."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "version": MODEL_FORMAT_VERSION,
        "N": net.widths[0],
        "hidden_layers": net.n_hidden,
        "widths": net.widths,
        "norm": norm.to_dict(),
        "L": norm.length,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    flat = np.concatenate([p.ravel() for p in net.parameters()])
    with open(os.path.join(directory, "params.f64"), "wb") as fh:
        fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def load_model(directory) -> tuple[Network, NormalizationSpec, dict]:
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        man = json.load(fh)
    if man.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {man.get('version')}")
    n, n_hidden = man["N"], man["hidden_layers"]
    flat = np.fromfile(os.path.join(directory, "params.f64"), dtype="<f8")
    net = init_network(n, n_hidden, seed=0)
    expected = net.parameter_count()
    if flat.size != expected:
        raise ValueError(f"params.f64 holds {flat.size} values, expected {expected}")
    offset = 0
    for p in net.parameters():
        p[...] = flat[offset:offset + p.size].reshape(p.shape)
        offset += p.size
    return net, NormalizationSpec.from_dict(man["norm"]), man
