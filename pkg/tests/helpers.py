"""Shared test utilities: tiny random meshes and finite-difference oracles."""

import numpy as np
from scipy.spatial import Delaunay

from neurofem.mesh import Mesh


def random_tet_mesh(rng, n_tets=2):
    """Small mesh of 1..4 positively oriented tets from a random point cloud."""
    assert 1 <= n_tets <= 4
    while True:
        pts = rng.uniform(0.0, 1.0, (8, 3))
        tri = Delaunay(pts)
        tets = tri.simplices[:n_tets].astype(np.int64)
        if len(tets) < n_tets:
            continue
        used = np.unique(tets)
        remap = {int(old): i for i, old in enumerate(used)}
        nodes = pts[used]
        tets = np.array([[remap[int(i)] for i in tet] for tet in tets])
        for tet in tets:
            p = nodes[tet]
            vol = np.linalg.det(np.stack([p[1] - p[0], p[2] - p[0], p[3] - p[0]], axis=1))
            if vol < 0:
                tet[2], tet[3] = tet[3], tet[2]
        vols = [np.linalg.det(np.stack([nodes[t[1]] - nodes[t[0]],
                                        nodes[t[2]] - nodes[t[0]],
                                        nodes[t[3]] - nodes[t[0]]], axis=1))
                for t in tets]
        if min(vols) > 1e-3:  # reject slivers, they wreck finite differences
            return Mesh(nodes=nodes, tets=tets, fixed_nodes=np.array([0]))


def fd_energy_gradient(system, u, h=1e-6):
    """Central differences of the total strain energy."""
    grad = np.empty(system.n_dofs)
    for i in range(system.n_dofs):
        up, um = u.copy(), u.copy()
        up[i] += h
        um[i] -= h
        grad[i] = (system.strain_energy(up) - system.strain_energy(um)) / (2 * h)
    return grad


def fd_force_jacobian(system, u, h=1e-6):
    """Column-wise central differences of the internal force vector."""
    n = system.n_dofs
    jac = np.empty((n, n))
    for j in range(n):
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        jac[:, j] = (system.internal_forces(up) - system.internal_forces(um)) / (2 * h)
    return jac


def linear_elastic_stiffness(mesh, lam, mu):
    """Independent small-strain P1 assembly via Voigt B-matrices.

    K_e = vol * B^T D B with engineering shear strains; this is the textbook
    linear-elasticity route, sharing no code with the hyperelastic assembly.
    """
    d_mat = np.zeros((6, 6))
    d_mat[:3, :3] = lam
    d_mat[np.diag_indices(3)] = lam + 2 * mu
    d_mat[3:, 3:] = mu * np.eye(3)

    n = mesh.n_dofs
    k = np.zeros((n, n))
    for tet in mesh.tets:
        p = mesh.nodes[tet]
        dm = np.stack([p[1] - p[0], p[2] - p[0], p[3] - p[0]], axis=1)
        vol = np.linalg.det(dm) / 6.0
        grads = np.zeros((4, 3))
        grads[1:] = np.linalg.inv(dm)
        grads[0] = -grads[1:].sum(axis=0)
        b = np.zeros((6, 12))
        for a in range(4):
            gx, gy, gz = grads[a]
            b[0, 3 * a] = gx
            b[1, 3 * a + 1] = gy
            b[2, 3 * a + 2] = gz
            b[3, 3 * a] = gy
            b[3, 3 * a + 1] = gx
            b[4, 3 * a + 1] = gz
            b[4, 3 * a + 2] = gy
            b[5, 3 * a] = gz
            b[5, 3 * a + 2] = gx
        ke = vol * b.T @ d_mat @ b
        dofs = np.array([3 * node + c for node in tet for c in range(3)])
        k[np.ix_(dofs, dofs)] += ke
    return k
