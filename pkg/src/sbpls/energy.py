"""Rescaled energies, their first variation and Hessian action.

All quantities live in the variable x / eps. With V_eps(x) = V(eps x) and
K_eps(x) = K(eps x) the functionals are

    E(u) = 1/2 |u|^2_{H^1_{V_eps}} + eps^3/4 int K_eps phi_{u^2} u^2 - int |u|^{p+1} / (p+1)
    I(u) = the same without the quartic term
    J(u) = the same with the Coulomb potential and prefactor eps^2/4

where phi_{uw} = (K_eps u w) * kappa(eps .) and kappa(r) = (1 - e^{-r}) / r.
Gradients are taken with respect to the L^2 pairing of the grid, so that
d/dt E(u + t w) = quad(residual(u) * w) holds exactly for the discrete energy.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fields import (
    DEFAULT_LEAKAGE,
    Field3,
    Grid3,
    convolve_bp,
    convolve_coulomb,
    inner_l2,
    minus_laplacian,
    quad,
)
from .potentials import PotentialSpec

__all__ = [
    "ScenarioPotentials",
    "potential_field",
    "energy_sbp",
    "energy_nls",
    "energy_sps",
    "residual",
    "hessian_apply",
    "quartic_form",
    "bp_potential",
    "nonlinearity",
    "CalculusCheck",
    "calculus_check",
]


@dataclass(frozen=True)
class ScenarioPotentials:
    V: PotentialSpec
    K: PotentialSpec
    p: float

    def __post_init__(self):
        if not 1.0 < self.p < 5.0:
            raise ValueError(f"p must lie in (1, 5), got {self.p}")

    @property
    def has_K(self) -> bool:
        return not self.K.is_zero


@lru_cache(maxsize=64)
def _potential_values(spec: PotentialSpec, grid: Grid3, eps: float) -> np.ndarray:
    v = spec(grid.scaled_points(eps))
    v.setflags(write=False)
    return v


def potential_field(spec: PotentialSpec, grid: Grid3, eps: float) -> Field3:
    """``spec(eps x)`` at the physical nodes of ``grid`` (cached, read-only)."""
    return Field3(grid, _potential_values(spec, grid, float(eps)))


def nonlinearity(u: np.ndarray, p: float) -> np.ndarray:
    """u |u|^{p-1}, written so integer p avoids the sign round trip."""
    if p == int(p) and int(p) % 2 == 1:
        return u ** int(p)
    return np.sign(u) * np.abs(u) ** p


def _checked(u: Field3, leakage):
    return u.check(leakage, "u")


def _quadratic(eps, u: Field3, sc: ScenarioPotentials) -> float:
    V = potential_field(sc.V, u.grid, eps)
    return 0.5 * (inner_l2(u, minus_laplacian(u)) + quad(V * u * u))


def _power(u: Field3, p: float) -> float:
    return quad(Field3(u.grid, np.abs(u.values) ** (p + 1.0))) / (p + 1.0)


def bp_potential(eps, u1: Field3, u2: Field3, sc: ScenarioPotentials) -> Field3:
    """phi_{u1 u2} = (K_eps u1 u2) * kappa(eps .)."""
    K = potential_field(sc.K, u1.grid, eps)
    return convolve_bp(K * u1 * u2, eps)


def energy_nls(eps, u: Field3, sc: ScenarioPotentials, leakage=DEFAULT_LEAKAGE) -> float:
    _checked(u, leakage)
    return _quadratic(eps, u, sc) - _power(u, sc.p)


def energy_sbp(eps, u: Field3, sc: ScenarioPotentials, leakage=DEFAULT_LEAKAGE) -> float:
    """E_eps(u); equals :func:`energy_nls` bit for bit when K is identically zero."""
    _checked(u, leakage)
    base = _quadratic(eps, u, sc) - _power(u, sc.p)
    if not sc.has_K:
        return base
    return base + 0.25 * eps**3 * quartic_form(eps, u, u, u, u, sc)


def energy_sps(eps, u: Field3, sc: ScenarioPotentials, leakage=DEFAULT_LEAKAGE) -> float:
    """Schrodinger-Poisson analogue with the Coulomb kernel and prefactor eps^2/4."""
    _checked(u, leakage)
    base = _quadratic(eps, u, sc) - _power(u, sc.p)
    if not sc.has_K:
        return base
    K = potential_field(sc.K, u.grid, eps)
    phi = convolve_coulomb(K * u * u)
    return base + 0.25 * eps**2 * quad(K * phi * u * u)


def residual(eps, u: Field3, sc: ScenarioPotentials, leakage=DEFAULT_LEAKAGE) -> Field3:
    """Strong form R of the first variation: dE(u)[w] = quad(R w)."""
    _checked(u, leakage)
    V = potential_field(sc.V, u.grid, eps)
    out = minus_laplacian(u).values + V.values * u.values - nonlinearity(u.values, sc.p)
    if sc.has_K:
        K = potential_field(sc.K, u.grid, eps)
        out = out + eps**3 * K.values * bp_potential(eps, u, u, sc).values * u.values
    return Field3(u.grid, out)


def hessian_apply(eps, u: Field3, w: Field3, sc: ScenarioPotentials, phi_uu: Field3 | None = None) -> Field3:
    """Strong form of w -> D^2E(u)[w, .], including both quartic Hessian terms.

    ``phi_uu`` may pass a precomputed phi_{u^2} when applying repeatedly.
    """
    u._check(w)
    V = potential_field(sc.V, u.grid, eps)
    p = sc.p
    out = minus_laplacian(w).values + V.values * w.values - p * np.abs(u.values) ** (p - 1.0) * w.values
    if sc.has_K:
        K = potential_field(sc.K, u.grid, eps)
        if phi_uu is None:
            phi_uu = bp_potential(eps, u, u, sc)
        phi_uw = bp_potential(eps, u, w, sc)
        out = out + eps**3 * K.values * (phi_uu.values * w.values + 2.0 * phi_uw.values * u.values)
    return Field3(u.grid, out)


def quartic_form(eps, u1: Field3, u2: Field3, u3: Field3, u4: Field3, sc: ScenarioPotentials) -> float:
    """int K_eps phi_{u1 u2} u3 u4."""
    if not sc.has_K:
        return 0.0
    K = potential_field(sc.K, u1.grid, eps)
    return quad(K * bp_potential(eps, u1, u2, sc) * u3 * u4)


@dataclass
class CalculusCheck:
    """Central-difference errors of the gradient and Hessian along one direction."""

    t: tuple[float, ...]
    grad_errors: list[float]
    hess_errors: list[float]
    symmetry: float

    @staticmethod
    def _order(t, e) -> float:
        return float(np.polyfit(np.log(t), np.log(e), 1)[0])

    @property
    def grad_order(self) -> float:
        return self._order(self.t, self.grad_errors)

    @property
    def hess_order(self) -> float:
        return self._order(self.t, self.hess_errors)


def calculus_check(eps, u: Field3, w: Field3, w2: Field3, sc: ScenarioPotentials, t=(0.2, 0.1, 0.05)) -> CalculusCheck:
    """Compare residual and Hessian with central differences of E and of the residual."""
    g = quad(residual(eps, u, sc, leakage=None) * w)
    Hw = hessian_apply(eps, u, w, sc)
    ge, he = [], []
    for s in t:
        fd = (energy_sbp(eps, u + s * w, sc, None) - energy_sbp(eps, u - s * w, sc, None)) / (2 * s)
        ge.append(abs(fd - g))
        dR = (residual(eps, u + s * w, sc, None) - residual(eps, u - s * w, sc, None)) / (2 * s)
        he.append(float(np.max(np.abs((dR - Hw).values))))
    a, b = quad(Hw * w2), quad(hessian_apply(eps, u, w2, sc) * w)
    return CalculusCheck(tuple(t), ge, he, abs(a - b) / max(abs(a), abs(b), 1e-300))
