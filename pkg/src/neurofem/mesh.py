"""Tetrahedral meshes: construction, validation, geometry queries and JSON I/O.

Meshes are immutable after construction. Node coordinates are rest positions
in meters; every tet is stored with positive signed volume. The surface node
set is always recomputed from face incidence (a face is on the boundary iff
it belongs to exactly one tet), never trusted from a file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised for structurally invalid meshes or malformed mesh files."""


# Six-tet decomposition of a hex cell. Corners are numbered by their (i,j,k)
# offsets, bit-packed as 4*i + 2*j + k. Each tet walks the main diagonal from
# corner 000 to corner 111; odd axis permutations have their last two corners
# swapped to keep the signed volume positive.
_HEX_TO_TETS = (
    (0b000, 0b100, 0b110, 0b111),  # x, y, z
    (0b000, 0b100, 0b111, 0b101),  # x, z, y (swapped)
    (0b000, 0b010, 0b111, 0b110),  # y, x, z (swapped)
    (0b000, 0b010, 0b011, 0b111),  # y, z, x
    (0b000, 0b001, 0b101, 0b111),  # z, x, y
    (0b000, 0b001, 0b111, 0b011),  # z, y, x (swapped)
)

MESH_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Mesh:
    """Immutable tetrahedral mesh.

    Attributes
    ----------
    nodes : (M, 3) float64 array
        Rest positions.
    tets : (T, 4) int64 array
        Node indices per tet, positively oriented.
    fixed_nodes : (F,) int64 array
        Sorted indices of nodes clamped to zero displacement.
    surface_nodes : (B,) int64 array
        Sorted indices of nodes on the boundary, derived from face counts.
    """

    nodes: np.ndarray
    tets: np.ndarray
    fixed_nodes: np.ndarray
    surface_nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=np.float64))
        tets = np.ascontiguousarray(np.asarray(self.tets, dtype=np.int64))
        fixed = np.unique(np.asarray(self.fixed_nodes, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError(f"nodes must have shape (M, 3), got {nodes.shape}")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshError(f"tets must have shape (T, 4), got {tets.shape}")
        if not np.all(np.isfinite(nodes)):
            raise MeshError("node coordinates must be finite")
        m = len(nodes)
        if tets.size and (tets.min() < 0 or tets.max() >= m):
            raise MeshError("tet index out of range")
        if tets.size:
            sorted_tets = np.sort(tets, axis=1)
            dup = np.nonzero((sorted_tets[:, :-1] == sorted_tets[:, 1:]).any(axis=1))[0]
            if dup.size:
                raise MeshError(f"tet {dup[0]} has repeated node indices")
        if fixed.size and (fixed[0] < 0 or fixed[-1] >= m):
            raise MeshError("fixed node index out of range")
        vols = tet_volumes(nodes, tets)
        bad = np.nonzero(vols <= 0.0)[0]
        if bad.size:
            raise MeshError(
                f"tet {bad[0]} has non-positive volume ({vols[bad[0]]:.3e}); "
                "tets must be positively oriented"
            )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "tets", tets)
        object.__setattr__(self, "fixed_nodes", fixed)
        object.__setattr__(self, "surface_nodes", _surface_nodes(tets))
        for arr in (self.nodes, self.tets, self.fixed_nodes, self.surface_nodes):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_dofs(self) -> int:
        return 3 * len(self.nodes)


def tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volume of each tet (positive for correct orientation)."""
    p = nodes[tets]  # (T, 4, 3)
    d = p[:, 1:] - p[:, :1]  # edge vectors from corner 0
    return np.linalg.det(d) / 6.0


def _surface_nodes(tets: np.ndarray) -> np.ndarray:
    """Nodes on faces that belong to exactly one tet."""
    counts: dict[tuple[int, int, int], int] = {}
    faces_of = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    for tet in tets:
        for fa in faces_of:
            key = tuple(sorted((tet[fa[0]], tet[fa[1]], tet[fa[2]])))
            counts[key] = counts.get(key, 0) + 1
    boundary = set()
    for key, c in counts.items():
        if c == 1:
            boundary.update(key)
    return np.array(sorted(boundary), dtype=np.int64)


def generate_beam_mesh(nx: int, ny: int, nz: int,
                       size_x: float, size_y: float, size_z: float) -> Mesh:
    """Regular tetrahedral beam mesh clamped on its x = 0 face.

    The box [0, size_x] x [0, size_y] x [0, size_z] is divided into
    nx * ny * nz hex cells, each split into six tets by a fixed pattern,
    so the result is fully deterministic.
    """
    if min(nx, ny, nz) < 1:
        raise MeshError("subdivision counts must be >= 1")
    if min(size_x, size_y, size_z) <= 0:
        raise MeshError("beam dimensions must be positive")

    xs = np.linspace(0.0, size_x, nx + 1)
    ys = np.linspace(0.0, size_y, ny + 1)
    zs = np.linspace(0.0, size_z, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [nid(i + (c >> 2 & 1), j + (c >> 1 & 1), k + (c & 1))
                          for c in range(8)]
                for pattern in _HEX_TO_TETS:
                    tets.append([corner[c] for c in pattern])

    fixed = [nid(0, j, k) for j in range(ny + 1) for k in range(nz + 1)]
    return Mesh(nodes=nodes, tets=np.array(tets), fixed_nodes=np.array(fixed))


def bounding_box_length(mesh: Mesh) -> float:
    """Longest side of the axis-aligned bounding box of the rest positions."""
    extent = mesh.nodes.max(axis=0) - mesh.nodes.min(axis=0)
    length = float(extent.max())
    if length <= 0.0:
        raise MeshError("degenerate mesh: bounding box has zero extent")
    return length


def save_mesh(mesh: Mesh, path) -> None:
    """Write a mesh as UTF-8 JSON; coordinates round-trip bit-exactly."""
    doc = {
        "version": MESH_FORMAT_VERSION,
        "nodes": [[float(x) for x in row] for row in mesh.nodes],
        "tets": [[int(x) for x in row] for row in mesh.tets],
        "fixed_nodes": [int(x) for x in mesh.fixed_nodes],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_mesh(path) -> Mesh:
    """Load a mesh written by :func:`save_mesh`, revalidating all invariants."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise MeshError(f"malformed mesh file {path}: expected an object")
    missing = {"version", "nodes", "tets", "fixed_nodes"} - doc.keys()
    if missing:
        raise MeshError(f"mesh file {path} missing keys: {sorted(missing)}")
    if doc["version"] != MESH_FORMAT_VERSION:
        raise MeshError(f"unsupported mesh format version {doc['version']}")
    try:
        return Mesh(nodes=np.array(doc["nodes"], dtype=np.float64),
                    tets=np.array(doc["tets"], dtype=np.int64),
                    fixed_nodes=np.array(doc["fixed_nodes"], dtype=np.int64))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc


def meshes_equal(a: Mesh, b: Mesh) -> bool:
    """Structural equality with bit-identical coordinates."""
    return (a.nodes.shape == b.nodes.shape
            and a.tets.shape == b.tets.shape
            and np.array_equal(a.nodes, b.nodes)
            and np.array_equal(a.tets, b.tets)
            and np.array_equal(a.fixed_nodes, b.fixed_nodes))
