"""Modal force synthesis and training-set generation.

External forces are sampled in the eigenbasis of the reduced rest-state
stiffness matrix: the softest modes carry the dominant deformations, so a
handful of them (three to five in practice) spans a rich set of loads.
Amplitudes are drawn uniformly per mode, scaled by the eigenvalue so that
the linearized displacement of a pure mode never exceeds ``d_max``. Forces
are optionally restricted to a random surface patch to cover local loading.

Every dataset sample stores a force together with the converged
Newton-Raphson displacement it produces; non-converged draws are resampled.
Per-sample randomness derives from (seed, sample index), so generation is
reproducible bit-for-bit regardless of worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .fem import FemSystem
from .materials import Material, make_material
from .mesh import Mesh, bounding_box_length, load_mesh, save_mesh
from .solver import SolverConfig, newton_raphson

DATASET_FORMAT_VERSION = 1
FORCE_NORM_FLOOR = 1e-12  # newtons; lower bound for the residual-normalization constant

# Sub-stream tags separating the random streams of the pipeline stages.
STREAM_DATASET = 0
STREAM_EVAL = 1
STREAM_BENCH = 2


class DatasetGenerationError(RuntimeError):
    """Too many samples failed to converge during generation."""


@dataclass(frozen=True)
class ModalBasis:
    """Smallest eigenpairs of the reduced rest-state stiffness matrix.

    phi has orthonormal columns (one per mode) over the free dofs; lam holds
    the matching eigenvalues in ascending order. free_dofs/n_dofs record the
    Dirichlet reduction so forces can be expanded back to full vectors.
    """

    phi: np.ndarray
    lam: np.ndarray
    free_dofs: np.ndarray
    n_dofs: int

    @property
    def k(self) -> int:
        return self.phi.shape[1]


def smallest_eigenpairs(k_matrix, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k smallest eigenpairs of a dense/sparse symmetric matrix, ascending,
    with each eigenvector's largest-magnitude component made positive."""
    dense = k_matrix.toarray() if hasattr(k_matrix, "toarray") else np.asarray(k_matrix, dtype=np.float64)
    n = dense.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"mode count k={k} out of range [1, {n}]")
    vals, vecs = scipy.linalg.eigh(dense, subset_by_index=[0, k - 1])
    for j in range(k):
        lead = np.argmax(np.abs(vecs[:, j]))
        if vecs[lead, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vals, vecs


def eigendecompose(system: FemSystem, k: int) -> ModalBasis:
    """Modal basis of the rest configuration (reduced K(0), smallest modes)."""
    k_red = system.reduce_matrix(system.tangent_stiffness(np.zeros(system.n_dofs)))
    if k_red.shape[0] == 0:
        raise ValueError("all dofs are fixed; no modes exist")
    vals, vecs = smallest_eigenpairs(k_red, k)
    if vals[0] <= 0.0:
        raise ValueError(
            f"reduced rest stiffness is not positive definite (lambda_1 = {vals[0]:.3e}); "
            "the mesh is insufficiently constrained")
    return ModalBasis(phi=vecs, lam=vals, free_dofs=system.free_dofs, n_dofs=system.n_dofs)


def sample_amplitudes(basis: ModalBasis, d_max: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform amplitudes, one per mode: alpha_i ~ U[-lam_i d_max, lam_i d_max].

    The eigenvalue scaling makes d_max the linearized displacement amplitude
    of each pure mode, so soft and stiff modes deform comparably.
    """
    if d_max < 0:
        raise ValueError("d_max must be non-negative")
    bound = basis.lam * d_max
    return rng.uniform(-bound, bound)


def modal_force(basis: ModalBasis, alpha: np.ndarray) -> np.ndarray:
    """External force f_ext = -phi @ alpha, expanded to the full dof vector."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (basis.k,):
        raise ValueError(f"alpha must have shape ({basis.k},), got {alpha.shape}")
    full = np.zeros(basis.n_dofs)
    full[basis.free_dofs] = -(basis.phi @ alpha)
    return full


def mask_patch(f: np.ndarray, mesh: Mesh, center_node: int, radius: float) -> np.ndarray:
    """Restrict a force to the surface nodes within ``radius`` of a center node.

    The surviving entries are rescaled so the masked vector keeps the input
    norm; an all-zero patch comes back as a zero vector for the caller to
    resample.
    """
    if radius <= 0:
        raise ValueError("patch radius must be positive")
    if center_node not in mesh.surface_nodes:
        raise ValueError(f"patch center {center_node} is not a surface node")
    dist = np.linalg.norm(mesh.nodes - mesh.nodes[center_node], axis=1)
    keep = np.zeros(mesh.n_nodes, dtype=bool)
    keep[mesh.surface_nodes] = True
    keep &= dist <= radius
    masked = np.where(np.repeat(keep, 3), f, 0.0)
    norm_before = np.linalg.norm(f)
    norm_after = np.linalg.norm(masked)
    if norm_after == 0.0:
        return masked
    return masked * (norm_before / norm_after)


@dataclass
class Dataset:
    """Paired external forces and converged displacements with the statistics
    needed to train and run a surrogate on them."""

    forces: np.ndarray          # (S, N) newtons
    displacements: np.ndarray   # (S, N) meters
    mesh: Mesh
    material: Material
    modes_used: int
    residual_norm_const: float  # c = max_s norm(f_s), floored
    force_mean: float
    force_std: float
    disp_mean: float            # statistics of displacements / L
    disp_std: float
    length: float               # bounding-box length L
    d_max: float
    patch_prob: float
    seed: int

    @property
    def n_samples(self) -> int:
        return self.forces.shape[0]


def _draw_sample(system: FemSystem, basis: ModalBasis, d_max: float, patch_prob: float,
                 seed_key: list[int], solver_config: SolverConfig,
                 max_retries: int = 10):
    """Draw force candidates until one solves; returns (f, u, attempts) or None."""
    rng = np.random.default_rng(seed_key)
    mesh = system.mesh
    length = bounding_box_length(mesh)
    for attempt in range(1, max_retries + 1):
        alpha = sample_amplitudes(basis, d_max, rng)
        f = modal_force(basis, alpha)
        if rng.random() < patch_prob:
            center = int(mesh.surface_nodes[rng.integers(len(mesh.surface_nodes))])
            radius = rng.uniform(0.1, 0.5) * length
            f = mask_patch(f, mesh, center, radius)
        if np.linalg.norm(f) == 0.0:
            continue
        try:
            result = newton_raphson(system, f, solver_config)
        except RuntimeError:
            continue
        if result.converged:
            return f, result.u, attempt
    return None


def generate_dataset(system: FemSystem, basis: ModalBasis, count: int, d_max: float,
                     patch_prob: float, seed: int, solver_config: SolverConfig | None = None,
                     workers: int = 1) -> Dataset:
    """Generate ``count`` converged force/displacement pairs.

    Each sample owns the random stream (STREAM_DATASET, seed, index), so the
    output is identical no matter how the samples are scheduled. Generation
    aborts when more than 10% of the samples exhaust their retry budget.
    """
    if count < 1:
        raise ValueError("sample count must be >= 1")
    if not 0.0 <= patch_prob <= 1.0:
        raise ValueError("patch_prob must be in [0, 1]")
    solver_config = solver_config or SolverConfig()

    def job(idx):
        return _draw_sample(system, basis, d_max, patch_prob,
                            [STREAM_DATASET, seed, idx], solver_config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(job, range(count)))
    else:
        raw = [job(i) for i in range(count)]

    failed = [i for i, r in enumerate(raw) if r is None]
    if len(failed) > 0.1 * count:
        raise DatasetGenerationError(
            f"{len(failed)}/{count} samples failed to converge after 10 retries each "
            f"(first failures: {failed[:5]}); reduce d_max or loosen the solver budget")

    kept = [r for r in raw if r is not None]
    forces = np.array([f for f, _, _ in kept])
    disps = np.array([u for _, u, _ in kept])
    length = bounding_box_length(system.mesh)
    c = max(float(np.max(np.linalg.norm(forces, axis=1))), FORCE_NORM_FLOOR)
    scaled = disps / length
    force_std = float(forces.std())
    disp_std = float(scaled.std())
    return Dataset(
        forces=forces, displacements=disps, mesh=system.mesh, material=system.material,
        modes_used=basis.k, residual_norm_const=c,
        force_mean=float(forces.mean()), force_std=force_std if force_std > 0 else 1.0,
        disp_mean=float(scaled.mean()), disp_std=disp_std if disp_std > 0 else 1.0,
        length=length, d_max=d_max, patch_prob=patch_prob, seed=seed)


def verify_dataset(dataset: Dataset, system: FemSystem, eps: float = 1e-6) -> np.ndarray:
    """Relative residual of every stored pair; all must be below eps."""
    rel = np.empty(dataset.n_samples)
    for s in range(dataset.n_samples):
        r = system.residual(dataset.displacements[s], dataset.forces[s])
        rel[s] = np.linalg.norm(r) / max(np.linalg.norm(
            system.reduce_vector(dataset.forces[s])), FORCE_NORM_FLOOR)
    return rel


# -- serialization ----------------------------------------------------------

def save_dataset(dataset: Dataset, directory) -> None:
    """Write manifest.json, mesh.json and raw little-endian float64 arrays."""
    os.makedirs(directory, exist_ok=True)
    mesh_file = "mesh.json"
    save_mesh(dataset.mesh, os.path.join(directory, mesh_file))
    manifest = {
        "version": DATASET_FORMAT_VERSION,
        "S": int(dataset.n_samples),
        "N": int(dataset.forces.shape[1]),
        "k": int(dataset.modes_used),
        "c": dataset.residual_norm_const,
        "L": dataset.length,
        "material": dataset.material.to_dict(),
        "d_max": dataset.d_max,
        "patch_prob": dataset.patch_prob,
        "seed": dataset.seed,
        "force_stats": {"mean": dataset.force_mean, "std": dataset.force_std},
        "disp_stats": {"mean": dataset.disp_mean, "std": dataset.disp_std},
        "mesh_file": mesh_file,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(directory, "forces.f64"), "wb") as fh:
        fh.write(np.ascontiguousarray(dataset.forces, dtype="<f8").tobytes())
    with open(os.path.join(directory, "displacements.f64"), "wb") as fh:
        fh.write(np.ascontiguousarray(dataset.displacements, dtype="<f8").tobytes())


def load_dataset(directory) -> Dataset:
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        man = json.load(fh)
    if man.get("version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {man.get('version')}")
    s, n = man["S"], man["N"]
    mesh = load_mesh(os.path.join(directory, man["mesh_file"]))
    mat = man["material"]
    forces = np.fromfile(os.path.join(directory, "forces.f64"), dtype="<f8")
    disps = np.fromfile(os.path.join(directory, "displacements.f64"), dtype="<f8")
    if forces.size != s * n or disps.size != s * n:
        raise ValueError("dataset array size does not match manifest S x N")
    return Dataset(
        forces=forces.reshape(s, n), displacements=disps.reshape(s, n),
        mesh=mesh, material=make_material(mat["model"], mat["young_modulus"], mat["poisson_ratio"]),
        modes_used=man["k"], residual_norm_const=man["c"],
        force_mean=man["force_stats"]["mean"], force_std=man["force_stats"]["std"],
        disp_mean=man["disp_stats"]["mean"], disp_std=man["disp_stats"]["std"],
        length=man["L"], d_max=man["d_max"], patch_prob=man["patch_prob"], seed=man["seed"])
