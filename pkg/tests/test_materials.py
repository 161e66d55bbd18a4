import numpy as np
import pytest

from neurofem.materials import (InvertedElementError, NeoHookean,
                                StVenantKirchhoff, make_material)

ALL_MODELS = ["stvk", "neohookean"]


def finite_difference_piola(material, f, h=1e-6):
    p = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            fp, fm = f.copy(), f.copy()
            fp[i, j] += h
            fm[i, j] -= h
            p[i, j] = (material.energy(fp) - material.energy(fm)) / (2 * h)
    return p


@pytest.mark.parametrize("model", ALL_MODELS)
def test_rest_state_is_stress_free(model):
    mat = make_material(model, 3.0e3, 0.3)
    assert mat.energy(np.eye(3)) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(mat.piola(np.eye(3)), 0.0, atol=1e-12)


def test_stvk_hand_values():
    mat = StVenantKirchhoff(1.0, 0.25)
    mat.lam = mat.mu = 1.0  # unit Lame constants for the hand calculation
    f = np.diag([1.1, 1.0, 1.0])
    # E = diag(0.105, 0, 0); Psi = 0.5*0.105^2 + 0.105^2
    assert mat.energy(f) == pytest.approx(0.0165375, rel=1e-12)
    assert np.allclose(mat.piola(f), np.diag([0.3465, 0.105, 0.105]), rtol=1e-12)


def test_lame_parameters():
    mat = make_material("stvk", 1.0e5, 0.4)
    assert mat.lam == pytest.approx(1.0e5 * 0.4 / (1.4 * 0.2))
    assert mat.mu == pytest.approx(1.0e5 / 2.8)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        make_material("stvk", -1.0, 0.3)
    with pytest.raises(ValueError):
        make_material("stvk", 1.0, 0.5)
    with pytest.raises(ValueError):
        make_material("unobtanium", 1.0, 0.3)


def test_neohookean_rejects_inverted():
    mat = NeoHookean(1.0, 0.3)
    with pytest.raises(InvertedElementError):
        mat.energy(np.diag([-1.0, 1.0, 1.0]))
    with pytest.raises(InvertedElementError):
        mat.piola(np.diag([0.0, 1.0, 1.0]))


@pytest.mark.parametrize("model", ALL_MODELS)
def test_piola_matches_energy_gradient(model):
    mat = make_material(model, 1.0, 0.3)
    rng = np.random.default_rng(5)
    for _ in range(8):
        f = np.eye(3) + rng.normal(0.0, 0.08, (3, 3))
        if np.linalg.det(f) <= 0.2:
            continue
        p = mat.piola(f)
        p_fd = finite_difference_piola(mat, f)
        assert np.linalg.norm(p - p_fd) < 1e-6 * max(np.linalg.norm(p), 1e-12)


@pytest.mark.parametrize("model", ALL_MODELS)
def test_piola_differential_matches_finite_difference(model):
    mat = make_material(model, 1.0, 0.3)
    rng = np.random.default_rng(9)
    for _ in range(6):
        f = np.eye(3) + rng.normal(0.0, 0.05, (3, 3))
        df = rng.normal(0.0, 1.0, (3, 3))
        h = 1e-6
        dp_fd = (mat.piola(f + h * df) - mat.piola(f - h * df)) / (2 * h)
        dp = mat.piola_differential(f, df)
        assert np.linalg.norm(dp - dp_fd) < 1e-5 * np.linalg.norm(dp_fd)


def test_neohookean_stress_blows_up_as_volume_vanishes():
    mat = NeoHookean(1.0, 0.3)
    scales = np.linspace(0.5, 0.1, 9)
    norms = [np.linalg.norm(mat.piola(np.diag([s, 1.0, 1.0]))) for s in scales]
    assert all(b > a for a, b in zip(norms, norms[1:]))


def test_batched_evaluation_matches_loop():
    rng = np.random.default_rng(3)
    fs = np.eye(3) + rng.normal(0.0, 0.05, (10, 3, 3))
    for model in ALL_MODELS:
        mat = make_material(model, 2.0, 0.35)
        batch_e = mat.energy(fs)
        batch_p = mat.piola(fs)
        for i in range(10):
            assert batch_e[i] == pytest.approx(mat.energy(fs[i]), rel=1e-14)
            assert np.allclose(batch_p[i], mat.piola(fs[i]), rtol=1e-14)
