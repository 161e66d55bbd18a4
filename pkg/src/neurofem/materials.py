"""Hyperelastic constitutive laws.

Each material maps a deformation gradient F to a strain energy density, the
first Piola-Kirchhoff stress P = dPsi/dF, and the directional derivative of P
(needed for tangent stiffness assembly). All three accept stacked inputs of
shape (..., 3, 3) and broadcast, so element loops stay in numpy.
"""

from __future__ import annotations

import numpy as np

_EYE = np.eye(3)


class InvertedElementError(RuntimeError):
    """det(F) <= 0 where the material requires positive volume."""

    def __init__(self, element: int | None = None, j: float | None = None):
        self.element = element
        detail = "" if element is None else f" in element {element}"
        value = "" if j is None else f" (det F = {j:.3e})"
        super().__init__(f"non-positive deformation jacobian{detail}{value}")


class Material:
    """Base class; holds the elastic constants shared by all laws.

    Parameters
    ----------
    young_modulus : float
        E > 0, in Pa.
    poisson_ratio : float
        0 <= nu < 0.5.
    """

    model = "base"

    def __init__(self, young_modulus: float, poisson_ratio: float):
        if young_modulus <= 0:
            raise ValueError(f"Young's modulus must be positive, got {young_modulus}")
        if not 0.0 <= poisson_ratio < 0.5:
            raise ValueError(f"Poisson ratio must be in [0, 0.5), got {poisson_ratio}")
        self.young_modulus = float(young_modulus)
        self.poisson_ratio = float(poisson_ratio)
        e, nu = self.young_modulus, self.poisson_ratio
        self.lam = e * nu / ((1 + nu) * (1 - 2 * nu))
        self.mu = e / (2 * (1 + nu))

    def energy(self, f: np.ndarray) -> np.ndarray:
        """Strain energy density (J/m^3) for deformation gradients f."""
        raise NotImplementedError

    def piola(self, f: np.ndarray) -> np.ndarray:
        """First Piola-Kirchhoff stress dPsi/dF."""
        raise NotImplementedError

    def piola_differential(self, f: np.ndarray, df: np.ndarray) -> np.ndarray:
        """Directional derivative dP(f)[df]; f broadcasts against df."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"model": self.model,
                "young_modulus": self.young_modulus,
                "poisson_ratio": self.poisson_ratio}


class StVenantKirchhoff(Material):
    """St. Venant-Kirchhoff law: Psi = lam/2 tr(E)^2 + mu tr(E^2),
    with Green strain E = (F^T F - I) / 2."""

    model = "stvk"

    def _green(self, f):
        return 0.5 * (np.swapaxes(f, -1, -2) @ f - _EYE)

    def energy(self, f):
        e = self._green(np.asarray(f, dtype=np.float64))
        tr = np.trace(e, axis1=-2, axis2=-1)
        tr_sq = np.trace(e @ e, axis1=-2, axis2=-1)
        return 0.5 * self.lam * tr ** 2 + self.mu * tr_sq

    def piola(self, f):
        f = np.asarray(f, dtype=np.float64)
        e = self._green(f)
        tr = np.trace(e, axis1=-2, axis2=-1)
        s = self.lam * tr[..., None, None] * _EYE + 2.0 * self.mu * e
        return f @ s

    def piola_differential(self, f, df):
        f = np.asarray(f, dtype=np.float64)
        df = np.asarray(df, dtype=np.float64)
        ft = np.swapaxes(f, -1, -2)
        dft = np.swapaxes(df, -1, -2)
        e = self._green(f)
        tr = np.trace(e, axis1=-2, axis2=-1)
        s = self.lam * tr[..., None, None] * _EYE + 2.0 * self.mu * e
        de = 0.5 * (dft @ f + ft @ df)
        dtr = np.trace(de, axis1=-2, axis2=-1)
        ds = self.lam * dtr[..., None, None] * _EYE + 2.0 * self.mu * de
        return df @ s + f @ ds


class NeoHookean(Material):
    """Compressible Neo-Hookean law:
    Psi = mu/2 (tr(F^T F) - 3) - mu ln J + lam/2 (ln J)^2, J = det F."""

    model = "neohookean"

    @staticmethod
    def _det(f):
        return np.linalg.det(f)

    def _check_jacobian(self, j):
        if np.any(j <= 0.0):
            flat = np.atleast_1d(j)
            bad = int(np.argmax(flat <= 0.0))
            raise InvertedElementError(element=bad if flat.size > 1 else None,
                                       j=float(flat.reshape(-1)[bad]))

    def energy(self, f):
        f = np.asarray(f, dtype=np.float64)
        j = self._det(f)
        self._check_jacobian(j)
        i1 = np.einsum("...ij,...ij->...", f, f)
        logj = np.log(j)
        return 0.5 * self.mu * (i1 - 3.0) - self.mu * logj + 0.5 * self.lam * logj ** 2

    def piola(self, f):
        f = np.asarray(f, dtype=np.float64)
        j = self._det(f)
        self._check_jacobian(j)
        finv_t = np.swapaxes(np.linalg.inv(f), -1, -2)
        logj = np.log(j)[..., None, None]
        return self.mu * (f - finv_t) + self.lam * logj * finv_t

    def piola_differential(self, f, df):
        f = np.asarray(f, dtype=np.float64)
        df = np.asarray(df, dtype=np.float64)
        j = self._det(f)
        self._check_jacobian(j)
        finv = np.linalg.inv(f)
        finv_t = np.swapaxes(finv, -1, -2)
        logj = np.log(j)[..., None, None]
        dft = np.swapaxes(df, -1, -2)
        # d(F^-T) = -F^-T dF^T F^-T ; d(ln J) = tr(F^-1 dF)
        ftdf = finv_t @ dft @ finv_t
        dlogj = np.einsum("...ij,...ji->...", finv, df)[..., None, None]
        return (self.mu * df
                + (self.mu - self.lam * logj) * ftdf
                + self.lam * dlogj * finv_t)


_MODELS = {cls.model: cls for cls in (StVenantKirchhoff, NeoHookean)}


def make_material(model: str, young_modulus: float, poisson_ratio: float) -> Material:
    """Instantiate a material by model name ("stvk" or "neohookean")."""
    try:
        cls = _MODELS[model]
    except KeyError:
        raise ValueError(f"unknown material model {model!r}; "
                         f"choose from {sorted(_MODELS)}") from None
    return cls(young_modulus, poisson_ratio)
