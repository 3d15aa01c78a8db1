"""Independent reference computations used by the self-checks.

Kept apart from the production code paths so that a check never compares a
routine with itself.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .fields import COULOMB_CELL_CONSTANT, Field3, Grid3
from .ground_state import shoot_u0

__all__ = [
    "direct_convolution",
    "gaussian_source",
    "bp_of_gaussian",
    "coulomb_of_gaussian",
    "smooth_random_field",
    "shooting_oracle_u0",
]


def direct_convolution(source: Field3, kind: str = "bp", eps: float = 1.0, chunk: int = 256) -> Field3:
    """O(N^2) node sum  sum_y k(x - y) f(y) h^3  with the same origin value as the spectral kernel."""
    g = source.grid
    x = np.stack(np.meshgrid(g.axis, g.axis, g.axis, indexing="ij"), axis=-1).reshape(-1, 3)
    f = source.values.ravel() * g.cell_volume
    out = np.empty(len(x))
    for s in range(0, len(x), chunk):
        d = np.linalg.norm(x[s:s + chunk, None, :] - x[None, :, :], axis=-1)
        if kind == "bp":
            t = eps * d
            with np.errstate(invalid="ignore", divide="ignore"):
                k = np.where(t > 0, -np.expm1(-t) / t, 1.0)
        elif kind == "coulomb":
            with np.errstate(divide="ignore"):
                k = np.where(d > 0, 1.0 / d, COULOMB_CELL_CONSTANT / g.h)
        else:
            raise ValueError(kind)
        out[s:s + chunk] = k @ f
    return Field3(g, out.reshape(g.shape))


def gaussian_source(grid: Grid3, s: float, center=None) -> Field3:
    """Unit-mass Gaussian of standard deviation ``s``."""
    c = np.asarray(grid.center if center is None else center, dtype=float)
    x, y, z = grid.coords()
    r2 = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
    return Field3(grid, np.exp(-r2 / (2 * s * s)) / (2 * math.pi * s * s) ** 1.5)


def coulomb_of_gaussian(r, s: float):
    """Newtonian potential erf(r / (s sqrt 2)) / r of a unit Gaussian."""
    r = np.asarray(r, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = erf(r / (s * math.sqrt(2.0))) / r
    return np.where(r > 0, val, math.sqrt(2.0 / math.pi) / s)


def _yukawa_of_gaussian(r, s: float, mu: float):
    """(e^{-mu|.|}/|.|) * Gaussian, in closed form via complementary error functions."""
    from scipy.special import erfcx

    r = np.asarray(r, dtype=float)
    a = s * math.sqrt(2.0)
    g = np.exp(-(r**2) / (a * a))
    c = mu * s / math.sqrt(2.0)
    t1 = erfcx(c - r / a)
    t2 = erfcx(c + r / a)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = g * (t1 - t2) / (2.0 * r)
    # r -> 0 limit, from erfcx'(c) = 2c erfcx(c) - 2/sqrt(pi)
    origin = (2.0 / math.sqrt(math.pi) - 2.0 * c * erfcx(c)) / a
    return np.where(r > 0, val, origin)


def bp_of_gaussian(r, s: float, eps: float = 1.0):
    """kappa(eps .) * Gaussian = (Coulomb - Yukawa with mass eps) / eps."""
    return (coulomb_of_gaussian(r, s) - _yukawa_of_gaussian(r, s, eps)) / eps


def smooth_random_field(grid: Grid3, rng: np.random.Generator, width: float = 2.0, cutoff: float = 2.0) -> Field3:
    """Low-pass random field under a Gaussian envelope, for property checks."""
    from .fields import _apply_symbol

    noise = Field3(grid, rng.standard_normal(grid.shape))
    smooth = _apply_symbol(noise, np.exp(-grid.k2 / (cutoff * cutoff)))
    ox, oy, oz = grid.offsets()
    env = np.exp(-(ox**2 + oy**2 + oz**2) / (2 * width * width))
    v = smooth.values * env
    return Field3(grid, v / np.max(np.abs(v)))


def shooting_oracle_u0(p: float) -> float:
    """U(0) from a second integrator (adaptive RK45) with plain bisection."""
    u0, _, _ = shoot_u0(p, method="RK45", rtol=1e-9, atol=1e-11, xtol=1e-9)
    return u0
