import numpy as np
import pytest
import scipy.sparse as sp

from neurofem.fem import FemSystem
from neurofem.materials import make_material
from neurofem.mesh import bounding_box_length, generate_beam_mesh
from neurofem.modal import eigendecompose, modal_force, sample_amplitudes
from neurofem.solver import (LinearSolveError, PredictionOutcome, SolverConfig,
                             hybrid_newton_raphson, newton_raphson, solve_linear)


@pytest.fixture(scope="module")
def beam():
    mesh = generate_beam_mesh(2, 2, 6, 1.2, 0.2, 0.2)
    system = FemSystem(mesh, make_material("stvk", 1.0e5, 0.4))
    basis = eigendecompose(system, 4)
    return system, basis


def tip_force(system, magnitude):
    """Concentrated y-load on the free-end nodes of the cantilever."""
    mesh = system.mesh
    tip = np.nonzero(mesh.nodes[:, 0] == mesh.nodes[:, 0].max())[0]
    f = np.zeros(system.n_dofs)
    f[3 * tip + 1] = magnitude / len(tip)
    return f


class TestSolveLinear:
    def test_identity(self):
        k = sp.identity(4, format="csr")
        rhs = np.array([1.0, -2.0, 3.0, 0.5])
        assert np.allclose(solve_linear(k, rhs, SolverConfig()), rhs)

    def test_diagonal(self):
        k = sp.diags([2.0, 4.0]).tocsr()
        x = solve_linear(k, np.array([2.0, 8.0]), SolverConfig())
        assert np.allclose(x, [1.0, 2.0], rtol=1e-12)

    def test_direct_and_cg_agree_on_random_spd(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(50, 50))
        k = sp.csr_matrix(a @ a.T + 50 * np.eye(50))
        rhs = rng.normal(size=50)
        x_direct = solve_linear(k, rhs, SolverConfig(linear_solver="direct"))
        x_cg = solve_linear(k, rhs, SolverConfig(linear_solver="cg"))
        assert np.linalg.norm(x_direct - x_cg) < 1e-7 * np.linalg.norm(x_direct)

    def test_direct_residual_contract(self, beam):
        system, _ = beam
        k = system.reduce_matrix(system.tangent_stiffness(np.zeros(system.n_dofs)))
        rng = np.random.default_rng(3)
        rhs = rng.normal(size=system.n_free)
        x = solve_linear(k, rhs, SolverConfig())
        assert np.linalg.norm(k @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_singular_matrix_raises(self):
        k = sp.csr_matrix(np.zeros((3, 3)))
        with pytest.raises(LinearSolveError):
            solve_linear(k, np.ones(3), SolverConfig())

    def test_empty_system_raises(self):
        with pytest.raises(LinearSolveError):
            solve_linear(sp.csr_matrix((0, 0)), np.zeros(0), SolverConfig())


class TestNewtonRaphson:
    def test_zero_force_zero_iterations(self, beam):
        system, _ = beam
        result = newton_raphson(system, np.zeros(system.n_dofs))
        assert result.converged
        assert result.iterations == 0
        assert np.abs(result.u).max() == 0.0
        assert result.residual_history == [0.0]

    def test_near_linear_load_converges_fast(self, beam):
        # distributed first-mode load, displacement ~0.1% of L: near-linear
        system, basis = beam
        length = bounding_box_length(system.mesh)
        alpha = np.zeros(basis.k)
        alpha[0] = basis.lam[0] * 0.005 * length
        result = newton_raphson(system, modal_force(basis, alpha), SolverConfig())
        assert result.converged
        assert result.iterations <= 2
        assert np.abs(result.u).max() <= 0.01 * length

    def test_converged_residual_below_tolerance(self, beam):
        system, basis = beam
        rng = np.random.default_rng(4)
        length = bounding_box_length(system.mesh)
        f = modal_force(basis, sample_amplitudes(basis, 0.1 * length, rng))
        config = SolverConfig(eps=1e-8)
        result = newton_raphson(system, f, config)
        assert result.converged
        f_norm = np.linalg.norm(system.reduce_vector(f))
        assert result.residual_history[-1] < 1e-8 * f_norm
        assert len(result.residual_history) == result.iterations + 1

    def test_quadratic_convergence_rate(self, beam):
        # moderate load (~20% of L tip deflection) keeps the last three
        # residuals inside the asymptotic regime, above assembly roundoff
        system, _ = beam
        length = bounding_box_length(system.mesh)
        probe = newton_raphson(system, tip_force(system, 1.0), SolverConfig())
        scale = 0.20 * length / np.abs(probe.u).max()
        result = newton_raphson(system, tip_force(system, scale), SolverConfig())
        assert result.converged
        r = result.residual_history[-3:]
        slope = (np.log(r[2]) - np.log(r[1])) / (np.log(r[1]) - np.log(r[0]))
        assert slope >= 1.7

    def test_max_iters_reported_not_raised(self, beam):
        system, basis = beam
        rng = np.random.default_rng(5)
        length = bounding_box_length(system.mesh)
        f = modal_force(basis, sample_amplitudes(basis, 0.2 * length, rng))
        result = newton_raphson(system, f, SolverConfig(max_iters=1))
        assert not result.converged
        assert result.iterations == 1
        assert len(result.residual_history) == 2


class TestHybridNewtonRaphson:
    def moderate_force(self, system, basis, seed=6):
        rng = np.random.default_rng(seed)
        length = bounding_box_length(system.mesh)
        return modal_force(basis, sample_amplitudes(basis, 0.05 * length, rng))

    def test_oracle_predictor_early_exits(self, beam):
        system, basis = beam
        f = self.moderate_force(system, basis)
        exact = newton_raphson(system, f, SolverConfig(eps=1e-10)).u
        result = hybrid_newton_raphson(system, f, lambda _: exact, SolverConfig())
        assert result.prediction_used == PredictionOutcome.EARLY_EXIT
        assert result.iterations == 0
        assert result.converged
        assert len(result.residual_history) == 1

    def test_zero_predictor_matches_classic(self, beam):
        # at a moderate load the first Newton step reduces the residual, so a
        # zero prediction ties with the start point and is discarded
        system, basis = beam
        f = self.moderate_force(system, basis)
        zero = lambda _: np.zeros(system.n_dofs)
        classic = newton_raphson(system, f, SolverConfig())
        hybrid = hybrid_newton_raphson(system, f, zero, SolverConfig())
        assert hybrid.prediction_used == PredictionOutcome.DISCARDED
        assert hybrid.iterations == classic.iterations
        assert np.array_equal(hybrid.u, classic.u)
        assert hybrid.residual_history == classic.residual_history

    def test_good_predictor_falls_back_and_wins(self, beam):
        system, basis = beam
        f = self.moderate_force(system, basis, seed=8)
        exact = newton_raphson(system, f, SolverConfig(eps=1e-10)).u
        noisy = lambda _: exact * 1.02  # close but above tolerance
        classic = newton_raphson(system, f, SolverConfig())
        hybrid = hybrid_newton_raphson(system, f, noisy, SolverConfig())
        assert hybrid.converged
        assert hybrid.prediction_used == PredictionOutcome.FALLBACK
        assert hybrid.iterations <= classic.iterations

    def test_garbage_predictor_still_converges(self, beam):
        system, basis = beam
        f = self.moderate_force(system, basis, seed=9)
        rng = np.random.default_rng(10)
        garbage = lambda _: rng.normal(0.0, 10.0, system.n_dofs)
        classic = newton_raphson(system, f, SolverConfig())
        hybrid = hybrid_newton_raphson(system, f, garbage, SolverConfig())
        assert hybrid.converged
        assert np.linalg.norm(hybrid.u - classic.u) <= 1e-6 * bounding_box_length(system.mesh)

    def test_nan_predictor_is_discarded(self, beam):
        system, basis = beam
        f = self.moderate_force(system, basis, seed=12)
        nan_pred = lambda _: np.full(system.n_dofs, np.nan)
        result = hybrid_newton_raphson(system, f, nan_pred, SolverConfig())
        assert result.converged
        assert result.prediction_used == PredictionOutcome.DISCARDED
        assert np.all(np.isfinite(result.u))

    def test_monotone_guard_on_first_iterate(self, beam):
        system, basis = beam
        f = self.moderate_force(system, basis, seed=13)
        exact = newton_raphson(system, f, SolverConfig(eps=1e-10)).u
        for predictor in (lambda _: exact * 1.02,
                          lambda _: np.zeros(system.n_dofs),
                          lambda _: exact * -5.0):
            hybrid = hybrid_newton_raphson(system, f, predictor, SolverConfig())
            u1 = newton_raphson(system, f, SolverConfig(max_iters=1))
            u_p = np.asarray(predictor(f)).copy()
            u_p[system.fixed_dofs] = 0.0
            rn1 = np.linalg.norm(system.residual(u1.u, f))
            rnp = np.linalg.norm(system.residual(u_p, f))
            assert hybrid.residual_history[1] <= min(rn1, rnp) * (1 + 1e-12)

    def test_same_root_as_classic(self, beam):
        system, basis = beam
        length = bounding_box_length(system.mesh)
        exact_cache = {}

        def decent_predictor(f_ext):
            key = hash(f_ext.tobytes())
            if key not in exact_cache:
                exact_cache[key] = newton_raphson(system, f_ext, SolverConfig(eps=1e-10)).u
            return exact_cache[key] * 1.1

        config = SolverConfig(eps=1e-10)
        for seed in range(5):
            f = self.moderate_force(system, basis, seed=20 + seed)
            classic = newton_raphson(system, f, config)
            hybrid = hybrid_newton_raphson(system, f, decent_predictor, config)
            assert classic.converged and hybrid.converged
            assert np.linalg.norm(hybrid.u - classic.u) <= 1e-6 * length

    def test_iterations_equal_linear_solves(self, beam):
        system, basis = beam
        f = self.moderate_force(system, basis, seed=30)
        calls = 0
        original = FemSystem.tangent_stiffness

        def counting(self_, u):
            nonlocal calls
            calls += 1
            return original(self_, u)

        FemSystem.tangent_stiffness = counting
        try:
            result = newton_raphson(system, f, SolverConfig())
        finally:
            FemSystem.tangent_stiffness = original
        assert calls == result.iterations


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(eps=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(linear_solver="quantum")
