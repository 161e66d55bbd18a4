"""Newton-Raphson solvers for static equilibrium.

Two variants: the classic iteration starting from zero, and a hybrid one
that feeds an external displacement predictor into the iteration. The hybrid
solver returns the prediction immediately when it already satisfies the
residual tolerance, swaps it in for the first iterate when it is strictly
better, and otherwise ignores it, so it can never do worse than the classic
iteration by more than one extra residual evaluation.

Tolerances: the residual test is relative, norm(R) < eps * max(norm(f_ext),
floor); the step test norm(du) < eta is absolute in meters and defaults to
1e-9 times the mesh bounding-box length.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import FemSystem
from .mesh import bounding_box_length

RESIDUAL_FLOOR = 1e-12  # newtons; keeps eps*scale meaningful for f_ext ~ 0


class LinearSolveError(RuntimeError):
    """Factorization failure or iterative non-convergence."""


class PredictionOutcome(str, enum.Enum):
    NOT_APPLICABLE = "not_applicable"
    EARLY_EXIT = "early_exit"
    FALLBACK = "fallback"
    DISCARDED = "discarded"


@dataclass
class SolverConfig:
    eps: float = 1e-6              # relative residual tolerance
    eta: float | None = None       # step tolerance (m); None -> 1e-9 * L
    max_iters: int = 30
    linear_solver: str = "direct"  # "direct" or "cg"

    def __post_init__(self):
        if self.eps <= 0 or (self.eta is not None and self.eta <= 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.linear_solver not in ("direct", "cg"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolveResult:
    u: np.ndarray
    iterations: int                 # = number of linear solves performed
    residual_history: list[float]   # length iterations + 1
    converged: bool
    prediction_used: PredictionOutcome = PredictionOutcome.NOT_APPLICABLE


def solve_linear(k_reduced: sp.spmatrix, rhs: np.ndarray, config: SolverConfig) -> np.ndarray:
    """Solve K x = rhs on the reduced (free-dof) space.

    Direct: sparse LU with iterative refinement down to 1e-10 relative.
    CG: Jacobi-preconditioned conjugate gradients to 1e-8 relative, capped
    at one iteration per unknown.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    n = rhs.shape[0]
    if n == 0:
        raise LinearSolveError("empty reduced system (all dofs fixed)")
    if k_reduced.shape != (n, n):
        raise LinearSolveError(f"matrix shape {k_reduced.shape} does not match rhs length {n}")
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros(n)

    if config.linear_solver == "direct":
        try:
            lu = spla.splu(k_reduced.tocsc())
            x = lu.solve(rhs)
        except RuntimeError as exc:
            raise LinearSolveError(f"sparse factorization failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("factorization produced non-finite solution (singular matrix)")
        for _ in range(3):
            defect = rhs - k_reduced @ x
            if np.linalg.norm(defect) <= 1e-10 * rhs_norm:
                break
            x = x + lu.solve(defect)
        else:
            if np.linalg.norm(rhs - k_reduced @ x) > 1e-10 * rhs_norm:
                raise LinearSolveError("direct solve failed to reach 1e-10 relative accuracy")
        return x

    diag = k_reduced.diagonal()
    if np.any(diag <= 0):
        raise LinearSolveError("non-positive diagonal entry; matrix is not SPD")
    precond = spla.LinearOperator((n, n), matvec=lambda v: v / diag)
    x, info = spla.cg(k_reduced, rhs, rtol=1e-8, atol=0.0, maxiter=n, M=precond)
    if info != 0:
        raise LinearSolveError(f"CG did not converge within {n} iterations (info={info})")
    return x


def _tolerances(system: FemSystem, f_ext: np.ndarray, config: SolverConfig) -> tuple[float, float]:
    scale = max(float(np.linalg.norm(system.reduce_vector(f_ext))), RESIDUAL_FLOOR)
    eta = config.eta if config.eta is not None else 1e-9 * bounding_box_length(system.mesh)
    return config.eps * scale, eta


def newton_raphson(system: FemSystem, f_ext: np.ndarray, config: SolverConfig | None = None) -> SolveResult:
    """Classic Newton-Raphson from u = 0: solve K(u) du = -R(u), u += du."""
    config = config or SolverConfig()
    f_ext = np.asarray(f_ext, dtype=np.float64)
    tol, eta = _tolerances(system, f_ext, config)

    u = np.zeros(system.n_dofs)
    r = system.residual(u, f_ext)
    rn = float(np.linalg.norm(r))
    history = [rn]
    if rn < tol:
        return SolveResult(u, 0, history, True)

    converged = False
    iterations = 0
    while iterations < config.max_iters:
        k_red = system.reduce_matrix(system.tangent_stiffness(u))
        du_red = solve_linear(k_red, -system.reduce_vector(r), config)
        u = u + system.expand_vector(du_red)
        iterations += 1
        r = system.residual(u, f_ext)
        rn = float(np.linalg.norm(r))
        history.append(rn)
        if rn < tol or float(np.linalg.norm(du_red)) < eta:
            converged = True
            break
    return SolveResult(u, iterations, history, converged)


def hybrid_newton_raphson(system: FemSystem, f_ext: np.ndarray,
                          predictor: Callable[[np.ndarray], np.ndarray],
                          config: SolverConfig | None = None) -> SolveResult:
    """Newton-Raphson accelerated by a displacement predictor.

    The predictor maps the external force vector to a displacement guess
    (equivalently the negated initial residual, since f_int(0) = 0). It may
    return garbage; the solver only adopts the prediction when it measurably
    helps, so convergence matches the classic iteration in the worst case.
    """
    config = config or SolverConfig()
    f_ext = np.asarray(f_ext, dtype=np.float64)
    tol, eta = _tolerances(system, f_ext, config)

    u0 = np.zeros(system.n_dofs)
    r0 = system.residual(u0, f_ext)
    rn0 = float(np.linalg.norm(r0))

    u_p = np.asarray(predictor(f_ext), dtype=np.float64).reshape(-1).copy()
    if u_p.shape[0] != system.n_dofs:
        raise ValueError(f"predictor returned length {u_p.shape[0]}, expected {system.n_dofs}")
    u_p[system.fixed_dofs] = 0.0
    r_p = system.residual(u_p, f_ext)
    rnp = float(np.linalg.norm(r_p))

    if rnp < tol:
        return SolveResult(u_p, 0, [rnp], True, PredictionOutcome.EARLY_EXIT)
    if rn0 < tol:
        # Zero load: the zero state already satisfies the tolerance.
        return SolveResult(u0, 0, [rn0], True, PredictionOutcome.DISCARDED)

    u, r, rn = u0, r0, rn0
    history = [rn0]
    outcome = PredictionOutcome.DISCARDED
    converged = False
    iterations = 0
    while iterations < config.max_iters:
        k_red = system.reduce_matrix(system.tangent_stiffness(u))
        du_red = solve_linear(k_red, -system.reduce_vector(r), config)
        u_next = u + system.expand_vector(du_red)
        iterations += 1
        r_next = system.residual(u_next, f_ext)
        rn_next = float(np.linalg.norm(r_next))
        if iterations == 1 and rn_next > rnp:
            u_next, r_next, rn_next = u_p, r_p, rnp
            outcome = PredictionOutcome.FALLBACK
        history.append(rn_next)
        u, r, rn = u_next, r_next, rn_next
        if rn < tol or float(np.linalg.norm(du_red)) < eta:
            converged = True
            break
    return SolveResult(u, iterations, history, converged, outcome)
