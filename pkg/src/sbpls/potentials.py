"""Analytic potentials: a constant plus Gaussian-windowed monomial bumps.

A bump is ``a * prod_d (x_d - c_d)^{q_d} * exp(-|x - c|^2 / sigma^2)``. It
factorises over the three axes, so every partial derivative is a product of
one-dimensional derivatives, each given in closed form by the Leibniz rule
and the Hermite polynomials: d^k/dt^k exp(-t^2/s^2) = (-1/s)^k H_k(t/s) exp(-t^2/s^2).
With ``sigma=None`` the bump is a bare monomial (unbounded unless q = 0).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermval
from numpy.typing import NDArray

__all__ = ["Bump", "PotentialSpec", "vanishing_order", "pure_derivatives"]


def _falling(q: int, j: int) -> float:
    out = 1.0
    for i in range(j):
        out *= q - i
    return out


def _gauss_deriv(t: NDArray, sigma: float, k: int) -> NDArray:
    coef = np.zeros(k + 1)
    coef[k] = 1.0
    s = t / sigma
    return (-1.0 / sigma) ** k * hermval(s, coef) * np.exp(-s * s)


def _axis_deriv(t: NDArray, q: int, sigma: float | None, k: int) -> NDArray:
    """k-th derivative of t^q exp(-t^2/sigma^2)."""
    if sigma is None:
        if k > q:
            return np.zeros_like(t)
        return _falling(q, k) * t ** (q - k)
    out = np.zeros_like(t)
    for j in range(min(k, q) + 1):
        out = out + math.comb(k, j) * _falling(q, j) * t ** (q - j) * _gauss_deriv(t, sigma, k - j)
    return out


@dataclass(frozen=True)
class Bump:
    amplitude: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sigma: float | None = 1.0
    q: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "q", tuple(int(v) for v in self.q))
        if len(self.center) != 3 or len(self.q) != 3:
            raise ValueError("bump center and q need three components")
        if any(v < 0 for v in self.q):
            raise ValueError("monomial exponents must be non-negative")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive or None")

    @property
    def bounded(self) -> bool:
        return self.sigma is not None or sum(self.q) == 0

    def derivative(self, pts: NDArray, alpha=(0, 0, 0)) -> NDArray:
        out = self.amplitude
        for d in range(3):
            out = out * _axis_deriv(pts[..., d] - self.center[d], self.q[d], self.sigma, alpha[d])
        return out

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "center": list(self.center), "sigma": self.sigma, "q": list(self.q)}

    @classmethod
    def from_dict(cls, d: dict) -> "Bump":
        return cls(float(d["amplitude"]), tuple(d.get("center", (0, 0, 0))), d.get("sigma", 1.0), tuple(d.get("q", (0, 0, 0))))


@dataclass(frozen=True)
class PotentialSpec:
    """``c0 + sum of bumps`` with closed-form derivatives of any order."""

    c0: float = 0.0
    bumps: tuple[Bump, ...] = field(default_factory=tuple)
    smoothness: int = 8

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))

    @property
    def is_constant(self) -> bool:
        return all(b.amplitude == 0 for b in self.bumps)

    @property
    def is_zero(self) -> bool:
        return self.c0 == 0 and self.is_constant

    @property
    def bounded(self) -> bool:
        return all(b.bounded for b in self.bumps)

    def __call__(self, pts) -> NDArray:
        return self.derivative(pts, (0, 0, 0))

    def derivative(self, pts, alpha=(0, 0, 0)) -> NDArray:
        """Partial derivative with multi-index ``alpha`` at points of shape (..., 3)."""
        pts = np.asarray(pts, dtype=float)
        if pts.shape[-1] != 3:
            raise ValueError("points need a trailing axis of length 3")
        out = np.full(pts.shape[:-1], self.c0 if sum(alpha) == 0 else 0.0)
        for b in self.bumps:
            out = out + b.derivative(pts, alpha)
        return out

    def grad(self, pt) -> NDArray:
        pt = np.asarray(pt, dtype=float)
        return np.stack([self.derivative(pt, e) for e in ((1, 0, 0), (0, 1, 0), (0, 0, 1))], axis=-1)

    def hessian(self, pt) -> NDArray:
        pt = np.asarray(pt, dtype=float)
        H = np.empty(pt.shape[:-1] + (3, 3))
        for i in range(3):
            for j in range(i, 3):
                a = [0, 0, 0]
                a[i] += 1
                a[j] += 1
                H[..., i, j] = H[..., j, i] = self.derivative(pt, tuple(a))
        return H

    def derivative_tensor(self, pt, order: int) -> dict[tuple[int, int, int], float]:
        """All partial derivatives of total order ``order`` at one point."""
        pt = np.asarray(pt, dtype=float).reshape(3)
        out = {}
        for a in itertools.product(range(order + 1), repeat=3):
            if sum(a) == order:
                out[a] = float(self.derivative(pt, a))
        return out

    def sample_extrema(self, half_width: float = 12.0, n: int = 49) -> tuple[float, float]:
        ax = np.linspace(-half_width, half_width, n)
        pts = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
        if self.bumps:
            pts = np.concatenate([pts, np.array([b.center for b in self.bumps])], axis=0)
        v = self(pts)
        return float(v.min()), float(v.max())

    def to_dict(self) -> dict:
        return {"c0": self.c0, "bumps": [b.to_dict() for b in self.bumps], "smoothness": self.smoothness}

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        return cls(float(d.get("c0", 0.0)), tuple(Bump.from_dict(b) for b in d.get("bumps", ())), int(d.get("smoothness", 8)))

    @classmethod
    def constant(cls, c0: float) -> "PotentialSpec":
        return cls(float(c0), ())


def pure_derivatives(spec: PotentialSpec, x0, order: int) -> NDArray:
    """(d_1^k V, d_2^k V, d_3^k V) at ``x0`` for k = ``order``."""
    x0 = np.asarray(x0, dtype=float)
    return np.array([float(spec.derivative(x0, tuple(order if d == i else 0 for d in range(3)))) for i in range(3)])


def vanishing_order(spec: PotentialSpec, x0, start: int = 1, max_order: int = 12, atol: float = 1e-12) -> int | None:
    """Smallest order >= ``start`` with a non-zero partial derivative at ``x0``.

    Returns ``None`` when all derivatives up to ``max_order`` vanish (treated
    as an infinite vanishing order).
    """
    for k in range(start, max_order + 1):
        if any(abs(v) > atol for v in spec.derivative_tensor(x0, k).values()):
            return k
    return None
