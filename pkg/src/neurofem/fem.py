"""Finite-element assembly on linear tetrahedra.

A :class:`FemSystem` couples a mesh with a material and precomputes the
per-element geometry (rest shape-function gradients, volumes) plus a sparse
scatter operator, so internal forces and tangent stiffness reduce to a few
batched einsums. Elements use single-point quadrature: the deformation
gradient is constant per tet.

Sign conventions: internal forces are the gradient of the total strain
energy, so the residual R(u) = f_int(u) - f_ext vanishes at equilibrium and
the Newton step solves K(u) du = -R(u).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .materials import InvertedElementError, Material
from .mesh import Mesh, tet_volumes


class FemSystem:
    """Static FEM problem: mesh + material + Dirichlet reduction.

    All assembly operations are pure functions of the displacement vector;
    the system itself is immutable and safe to share.
    """

    def __init__(self, mesh: Mesh, material: Material):
        self.mesh = mesh
        self.material = material
        self.n_dofs = mesh.n_dofs

        fixed = np.repeat(3 * mesh.fixed_nodes, 3) + np.tile([0, 1, 2], len(mesh.fixed_nodes))
        self.fixed_dofs = fixed.astype(np.int64)
        self.free_dofs = np.setdiff1d(np.arange(self.n_dofs, dtype=np.int64), self.fixed_dofs)
        self.n_free = len(self.free_dofs)

        tets = mesh.tets
        rest = mesh.nodes[tets]                       # (E, 4, 3)
        edges = (rest[:, 1:] - rest[:, :1]).transpose(0, 2, 1)  # columns = edge vectors
        self.volumes = np.linalg.det(edges) / 6.0
        self.grad_xi = np.linalg.inv(edges)           # rows = gradients of barycentric coords

        # Shape-function gradients for all four corners: corner 0 carries the
        # negative sum so that rigid translations produce F = I exactly.
        e = mesh.n_tets
        self.grad_shape = np.empty((e, 4, 3))
        self.grad_shape[:, 1:] = self.grad_xi
        self.grad_shape[:, 0] = -self.grad_xi.sum(axis=1)

        self._scatter = self._build_scatter()
        self._edofs = (3 * np.repeat(tets, 3, axis=1) + np.tile([0, 1, 2], 4)).astype(np.int64)
        self._k_rows = np.repeat(self._edofs, 12, axis=1).ravel()
        self._k_cols = np.tile(self._edofs, (1, 12)).ravel()

    def _build_scatter(self) -> sp.csr_matrix:
        """Sparse map from flattened per-element H = vol * P * G^T blocks
        (H[:, :, c] is the force on corner c+1) to the global force vector."""
        e = self.mesh.n_tets
        tets = self.mesh.tets
        rows = np.empty(18 * e, dtype=np.int64)
        cols = np.empty(18 * e, dtype=np.int64)
        vals = np.empty(18 * e)
        idx = 0
        base = 9 * np.arange(e, dtype=np.int64)
        for i in range(3):
            for c in range(3):
                col = base + 3 * i + c
                n = e
                rows[idx:idx + n] = 3 * tets[:, c + 1] + i
                cols[idx:idx + n] = col
                vals[idx:idx + n] = 1.0
                idx += n
                rows[idx:idx + n] = 3 * tets[:, 0] + i
                cols[idx:idx + n] = col
                vals[idx:idx + n] = -1.0
                idx += n
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(self.n_dofs, 9 * e))
        return mat.tocsr()

    # -- kinematics ---------------------------------------------------------

    def deformation_gradients(self, u: np.ndarray) -> np.ndarray:
        """Constant per-element F = I + grad(u); u may be (N,) or (B, N)."""
        u = self._check_u(u)
        batched = u.ndim == 2
        disp = u.reshape(u.shape[0], -1, 3) if batched else u.reshape(-1, 3)
        tets = self.mesh.tets
        du = disp[..., tets[:, 1:], :] - disp[..., tets[:, :1], :]
        du = np.swapaxes(du, -1, -2)                  # columns = corner differences
        f = du @ self.grad_xi + np.eye(3)
        return f

    def _check_u(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1] != self.n_dofs:
            raise ValueError(f"displacement length {u.shape[-1]} != {self.n_dofs} dofs")
        if u.ndim not in (1, 2):
            raise ValueError("displacement must be a vector or a batch of vectors")
        return u

    def strain_energy(self, u: np.ndarray) -> float | np.ndarray:
        """Total strain energy: sum of vol * Psi(F) over elements."""
        f = self.deformation_gradients(u)
        return self.material.energy(f) @ self.volumes

    # -- assembly -----------------------------------------------------------

    def internal_forces(self, u: np.ndarray) -> np.ndarray:
        """Nodal internal force vector f_int(u) = d(strain energy)/du."""
        f = self.deformation_gradients(u)
        self._guard_inversion(f)
        p = self.material.piola(f)
        h = np.einsum("e,...eij,ekj->...eik", self.volumes, p, self.grad_xi)
        flat = h.reshape(*h.shape[:-3], 9 * self.mesh.n_tets)
        if flat.ndim == 1:
            return self._scatter @ flat
        return (self._scatter @ flat.T).T

    def _guard_inversion(self, f: np.ndarray) -> None:
        """Raise with the offending element id when the law needs det F > 0."""
        if self.material.model == "stvk":
            return
        j = np.linalg.det(f)
        if np.any(j <= 0.0):
            elem = int(np.argmax(np.any(j.reshape(-1, self.mesh.n_tets) <= 0.0, axis=0)))
            jbad = float(j.reshape(-1, self.mesh.n_tets)[:, elem].min())
            raise InvertedElementError(element=elem, j=jbad)

    def tangent_stiffness(self, u: np.ndarray) -> sp.csr_matrix:
        """Sparse N x N Jacobian K(u) = d f_int / du (12x12 analytic blocks)."""
        u = self._check_u(u)
        if u.ndim != 1:
            raise ValueError("tangent stiffness takes a single displacement vector")
        f = self.deformation_gradients(u)
        self._guard_inversion(f)
        e = self.mesh.n_tets

        # Unit-dof perturbations: dof d = 3a + i moves corner a along axis i,
        # giving the rank-one differential dF = e_i (x) grad_shape[a].
        df = np.zeros((e, 12, 3, 3))
        for a in range(4):
            for i in range(3):
                df[:, 3 * a + i, i, :] = self.grad_shape[:, a, :]

        dp = self.material.piola_differential(f[:, None], df)
        dh = np.einsum("e,edij,ekj->edik", self.volumes, dp, self.grad_xi)

        fnode = np.empty((e, 12, 4, 3))
        fnode[:, :, 1:, :] = dh.transpose(0, 1, 3, 2)
        fnode[:, :, 0, :] = -dh.sum(axis=3)
        blocks = fnode.reshape(e, 12, 12).transpose(0, 2, 1)  # (element, row dof, col dof)

        k = sp.coo_matrix((blocks.ravel(), (self._k_rows, self._k_cols)),
                          shape=(self.n_dofs, self.n_dofs))
        return k.tocsr()

    def residual(self, u: np.ndarray, f_ext: np.ndarray) -> np.ndarray:
        """R(u) = f_int(u) - f_ext with fixed-dof entries zeroed.

        Reaction forces at clamped nodes are excluded so that norm(R) is a
        meaningful convergence measure. Accepts batches like internal_forces.
        """
        f_ext = np.asarray(f_ext, dtype=np.float64)
        if f_ext.shape[-1] != self.n_dofs:
            raise ValueError(f"force length {f_ext.shape[-1]} != {self.n_dofs} dofs")
        r = self.internal_forces(u) - f_ext
        r[..., self.fixed_dofs] = 0.0
        return r

    # -- Dirichlet reduction --------------------------------------------------

    def reduce_vector(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[..., self.free_dofs]

    def expand_vector(self, v_red: np.ndarray) -> np.ndarray:
        v_red = np.asarray(v_red, dtype=np.float64)
        out = np.zeros(v_red.shape[:-1] + (self.n_dofs,))
        out[..., self.free_dofs] = v_red
        return out

    def reduce_matrix(self, k: sp.spmatrix) -> sp.csr_matrix:
        return k.tocsr()[self.free_dofs][:, self.free_dofs]


def rest_volume(mesh: Mesh) -> float:
    return float(tet_volumes(mesh.nodes, mesh.tets).sum())
