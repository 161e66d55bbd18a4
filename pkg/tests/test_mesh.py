import json

import numpy as np
import pytest

from neurofem.mesh import (Mesh, MeshError, bounding_box_length,
                           generate_beam_mesh, load_mesh, meshes_equal,
                           save_mesh, tet_volumes)


def test_single_cell_counts():
    mesh = generate_beam_mesh(1, 1, 1, 1.0, 1.0, 1.0)
    assert mesh.n_nodes == 8
    assert mesh.n_tets == 6
    assert len(mesh.fixed_nodes) == 4
    assert len(mesh.surface_nodes) == 8


def test_two_cell_counts():
    mesh = generate_beam_mesh(2, 1, 1, 2.0, 1.0, 1.0)
    assert mesh.n_nodes == 12
    assert mesh.n_tets == 12


@pytest.mark.parametrize("dims", [(1, 1, 1), (2, 1, 1), (2, 2, 10), (3, 2, 4)])
def test_all_tets_positive_volume(dims):
    # direct determinant evaluation, independent of the constructor checks
    mesh = generate_beam_mesh(*dims, 1.7, 0.9, 2.3)
    for tet in mesh.tets:
        p = mesh.nodes[tet]
        vol = np.linalg.det(np.stack([p[1] - p[0], p[2] - p[0], p[3] - p[0]], axis=1)) / 6.0
        assert vol > 0.0


def test_volume_adds_up_to_box():
    mesh = generate_beam_mesh(2, 3, 4, 2.0, 0.3, 0.4)
    assert tet_volumes(mesh.nodes, mesh.tets).sum() == pytest.approx(2.0 * 0.3 * 0.4)


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, 0, 1), (1, 1, 0)])
def test_rejects_zero_subdivisions(bad):
    with pytest.raises(MeshError):
        generate_beam_mesh(*bad, 1.0, 1.0, 1.0)


def test_rejects_nonpositive_sizes():
    with pytest.raises(MeshError):
        generate_beam_mesh(1, 1, 1, 0.0, 1.0, 1.0)
    with pytest.raises(MeshError):
        generate_beam_mesh(1, 1, 1, 1.0, -2.0, 1.0)


def test_bounding_box_length():
    assert bounding_box_length(generate_beam_mesh(2, 1, 1, 2.0, 1.0, 1.0)) == 2.0
    assert bounding_box_length(generate_beam_mesh(1, 1, 1, 1.0, 1.0, 1.0)) == 1.0


def test_bounding_box_degenerate():
    mesh = generate_beam_mesh(1, 1, 1, 1.0, 1.0, 1.0)
    collapsed = Mesh(nodes=np.zeros((4, 3)), tets=np.empty((0, 4), dtype=np.int64),
                     fixed_nodes=np.array([0]))
    del mesh
    with pytest.raises(MeshError):
        bounding_box_length(collapsed)


def test_fixed_nodes_on_clamped_face():
    mesh = generate_beam_mesh(2, 2, 10, 2.0, 0.2, 0.2)
    assert np.all(mesh.nodes[mesh.fixed_nodes, 0] == 0.0)
    others = np.setdiff1d(np.arange(mesh.n_nodes), mesh.fixed_nodes)
    assert np.all(mesh.nodes[others, 0] > 0.0)


def test_deterministic_generation():
    a = generate_beam_mesh(2, 2, 5, 2.0, 0.2, 0.2)
    b = generate_beam_mesh(2, 2, 5, 2.0, 0.2, 0.2)
    assert meshes_equal(a, b)


def test_surface_nodes_match_grid_boundary():
    nx, ny, nz = 3, 2, 4
    mesh = generate_beam_mesh(nx, ny, nz, 1.0, 1.0, 1.0)
    eps = 1e-12
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    on_boundary = np.any((np.abs(mesh.nodes - lo) < eps) | (np.abs(mesh.nodes - hi) < eps), axis=1)
    assert set(mesh.surface_nodes) == set(np.nonzero(on_boundary)[0])


def test_surface_nodes_by_face_counting():
    # brute-force oracle: count face occurrences across tets
    mesh = generate_beam_mesh(2, 2, 3, 1.0, 1.0, 1.0)
    counts = {}
    for tet in mesh.tets:
        for face in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            key = tuple(sorted(int(tet[i]) for i in face))
            counts[key] = counts.get(key, 0) + 1
    expected = set()
    for key, c in counts.items():
        assert c in (1, 2)
        if c == 1:
            expected.update(key)
    assert set(mesh.surface_nodes) == expected


def test_roundtrip_is_bit_exact(tmp_path):
    mesh = generate_beam_mesh(2, 1, 1, 2.0, 1.0, 1.0)
    path = tmp_path / "beam.json"
    save_mesh(mesh, path)
    again = load_mesh(path)
    assert meshes_equal(mesh, again)
    save_mesh(again, tmp_path / "beam2.json")
    assert (tmp_path / "beam.json").read_bytes() == (tmp_path / "beam2.json").read_bytes()


def test_load_rejects_out_of_range_index(tmp_path):
    mesh = generate_beam_mesh(1, 1, 1, 1.0, 1.0, 1.0)
    path = tmp_path / "bad.json"
    save_mesh(mesh, path)
    doc = json.loads(path.read_text())
    doc["tets"][0][0] = mesh.n_nodes  # index == M is out of range
    path.write_text(json.dumps(doc))
    with pytest.raises(MeshError):
        load_mesh(path)


def test_load_rejects_inverted_tet(tmp_path):
    mesh = generate_beam_mesh(1, 1, 1, 1.0, 1.0, 1.0)
    path = tmp_path / "bad.json"
    save_mesh(mesh, path)
    doc = json.loads(path.read_text())
    doc["tets"][0] = [doc["tets"][0][i] for i in (1, 0, 2, 3)]  # swap -> negative volume
    path.write_text(json.dumps(doc))
    with pytest.raises(MeshError):
        load_mesh(path)


def test_load_rejects_malformed_file(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("{not json")
    with pytest.raises(MeshError):
        load_mesh(path)
    path.write_text(json.dumps({"version": 1, "nodes": []}))
    with pytest.raises(MeshError):
        load_mesh(path)


def test_constructor_rejects_duplicate_indices():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    with pytest.raises(MeshError):
        Mesh(nodes=nodes, tets=np.array([[0, 1, 2, 2]]), fixed_nodes=np.array([0]))


def test_mesh_is_immutable():
    mesh = generate_beam_mesh(1, 1, 1, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        mesh.nodes[0, 0] = 5.0
