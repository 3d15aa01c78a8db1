"""Box grids, spectral calculus and free-space convolutions.

Fields live on a uniform grid of ``n`` nodes per axis with spacing
``h = 2L/n``, stored as offsets ``-L + k h`` around a physical center, so the
center itself is the node with index ``n // 2``. Derivatives are spectral
(periodic box); convolutions with the Bopp-Podolsky kernel and with the
Coulomb kernel are free-space (Hockney) convolutions: the kernel is sampled on
a doubled box and the source is zero-padded, so no periodic images enter.

Quadrature is the trapezoid rule on the box, ``h^3`` times the sum.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from numpy.typing import NDArray

__all__ = [
    "Grid3",
    "Field3",
    "SpectralKernel",
    "LeakageError",
    "sample",
    "minus_laplacian",
    "spectral_derivative",
    "solve_helmholtz",
    "quad",
    "inner_l2",
    "inner_h1f",
    "dual_norm",
    "riesz_h1",
    "convolve_bp",
    "convolve_coulomb",
    "bp_kernel",
    "coulomb_kernel",
    "bp_multiplier",
    "coulomb_multiplier",
    "write_snapshot",
    "read_snapshot",
    "fft_workers",
]

# integral of 1/|x| over the unit cube centred at 0; cell average of the
# Coulomb kernel at the origin is this value divided by h
COULOMB_CELL_CONSTANT = 2.380077363979553

DEFAULT_LEAKAGE = 1e-3


class LeakageError(ValueError):
    """Raised when a field is not negligible on the outer shell of its box."""


def fft_workers() -> int:
    raw = os.environ.get("SBP_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True)
class Grid3:
    """Uniform cubic grid of ``n**3`` nodes with half width ``L`` around ``center``."""

    center: tuple[float, float, float]
    L: float
    n: int

    def __post_init__(self):
        c = tuple(float(v) for v in np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "center", c)
        if not self.L > 0:
            raise ValueError("half width L must be positive")
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.h**3

    def recentered(self, center) -> "Grid3":
        return Grid3(tuple(center), self.L, self.n)

    @cached_property
    def axis(self) -> NDArray:
        """Node offsets from the center along one axis."""
        return -self.L + self.h * np.arange(self.n)

    def offsets(self) -> tuple[NDArray, NDArray, NDArray]:
        """Broadcastable offset arrays (x, y, z) relative to the center."""
        a = self.axis
        return a[:, None, None], a[None, :, None], a[None, None, :]

    def coords(self) -> tuple[NDArray, NDArray, NDArray]:
        """Broadcastable physical coordinates of the nodes."""
        ox, oy, oz = self.offsets()
        cx, cy, cz = self.center
        return ox + cx, oy + cy, oz + cz

    def scaled_points(self, eps: float) -> NDArray:
        """Physical nodes times ``eps`` as an array of shape (n, n, n, 3)."""
        x, y, z = self.coords()
        pts = np.empty(self.shape + (3,))
        pts[..., 0], pts[..., 1], pts[..., 2] = eps * x, eps * y, eps * z
        return pts

    @cached_property
    def wavenumbers(self) -> tuple[NDArray, NDArray]:
        """Angular wavenumbers along one axis for the full and the half (rfft) axis.

        The Nyquist mode is zeroed: it has no consistent real derivative.
        """
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        k[self.n // 2] = 0.0
        kr = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.h)
        kr[-1] = 0.0
        return k, kr

    @cached_property
    def k2(self) -> NDArray:
        """Symbol of -Delta on the rfft half spectrum."""
        k, kr = self.wavenumbers
        return k[:, None, None] ** 2 + k[None, :, None] ** 2 + kr[None, None, :] ** 2

    def zeros(self) -> "Field3":
        return Field3(self, np.zeros(self.shape))


def _as_values(f) -> NDArray:
    return f.values if isinstance(f, Field3) else f


@dataclass(frozen=True, eq=False)
class Field3:
    """Real scalar field on a :class:`Grid3`."""

    grid: Grid3
    values: NDArray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def _check(self, other: "Field3"):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def _wrap(self, v) -> "Field3":
        return Field3(self.grid, v)

    def __add__(self, other):
        if isinstance(other, Field3):
            self._check(other)
            return self._wrap(self.values + other.values)
        return self._wrap(self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Field3):
            self._check(other)
            return self._wrap(self.values - other.values)
        return self._wrap(self.values - other)

    def __rsub__(self, other):
        return self._wrap(other - self.values)

    def __mul__(self, other):
        if isinstance(other, Field3):
            self._check(other)
            return self._wrap(self.values * other.values)
        return self._wrap(self.values * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / _as_values(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def copy(self) -> "Field3":
        return self._wrap(self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def leakage(self) -> float:
        """Largest magnitude on the outermost shell relative to the field maximum."""
        v = np.abs(self.values)
        vmax = v.max()
        if vmax == 0:
            return 0.0
        shell = max(v[0].max(), v[-1].max(), v[:, 0].max(), v[:, -1].max(), v[:, :, 0].max(), v[:, :, -1].max())
        return float(shell / vmax)

    def check(self, leakage: float | None = DEFAULT_LEAKAGE, label: str = "field") -> "Field3":
        """Raise if values are non-finite or the field leaks through the box boundary."""
        if not self.is_finite():
            raise FloatingPointError(f"{label} has non-finite values")
        if leakage is not None:
            lk = self.leakage()
            if lk > leakage:
                raise LeakageError(f"{label} boundary leakage {lk:.2e} exceeds {leakage:.1e}; enlarge the box")
        return self


def sample(prof, center, grid: Grid3) -> Field3:
    """Values ``prof(|x - center|)`` at the physical nodes of ``grid``."""
    x, y, z = grid.coords()
    c = np.asarray(center, dtype=float).reshape(3)
    r = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)
    return Field3(grid, prof(r.ravel()).reshape(grid.shape))


# --- spectral operators ----------------------------------------------------

def _rfft(v):
    return sfft.rfftn(v, workers=fft_workers())


def _irfft(vh, shape):
    return sfft.irfftn(vh, s=shape, workers=fft_workers())


def _apply_symbol(u: Field3, symbol) -> Field3:
    g = u.grid
    return Field3(g, _irfft(_rfft(u.values) * symbol, g.shape))


def minus_laplacian(u: Field3) -> Field3:
    """Spectral -Delta u on the periodic box."""
    return _apply_symbol(u, u.grid.k2)


def spectral_derivative(u: Field3, axis: int) -> Field3:
    """Spectral partial derivative along ``axis`` (0, 1 or 2)."""
    g = u.grid
    k, kr = g.wavenumbers
    ks = [k[:, None, None], k[None, :, None], kr[None, None, :]][axis]
    return _apply_symbol(u, 1j * ks)


def solve_helmholtz(rhs: Field3, mass2: float) -> Field3:
    """Return ``(-Delta + mass2)^{-1} rhs``; ``mass2`` must be positive."""
    if not mass2 > 0:
        raise ValueError("mass2 must be positive")
    return _apply_symbol(rhs, 1.0 / (rhs.grid.k2 + mass2))


def quad(u) -> float:
    """Trapezoid quadrature over the box."""
    if isinstance(u, Field3):
        return float(u.values.sum() * u.grid.cell_volume)
    raise TypeError("quad expects a Field3")


def inner_l2(u: Field3, w: Field3) -> float:
    u._check(w)
    return float(np.vdot(u.values, w.values) * u.grid.cell_volume)


def inner_h1f(u: Field3, w: Field3, f=1.0) -> float:
    """Weighted product: integral of grad u . grad w + f u w.

    The gradient part is spectral (Parseval-consistent with
    :func:`minus_laplacian`), the weighted mass part uses the trapezoid rule.
    ``f`` is a scalar or a field.
    """
    u._check(w)
    fv = _as_values(f)
    if isinstance(f, Field3):
        u._check(f)
    if np.min(fv) <= 0:
        raise ValueError("weight f must be positive")
    grad = inner_l2(u, minus_laplacian(w))
    return grad + float(np.sum(fv * u.values * w.values) * u.grid.cell_volume)


def riesz_h1(r: Field3) -> Field3:
    """H^1 Riesz representative ``(1 - Delta)^{-1} r`` of the functional w -> integral r w."""
    return solve_helmholtz(r, 1.0)


def dual_norm(r: Field3) -> float:
    """Norm of w -> integral r w in the dual of H^1, spectral weight (1 + k^2)^{-1}."""
    return math.sqrt(max(inner_l2(r, riesz_h1(r)), 0.0))


# --- free-space convolution --------------------------------------------------

def bp_multiplier(k2, eps: float = 1.0):
    """Fourier transform of x -> kappa(eps x) with kappa(r) = (1 - e^{-r}) / r.

    Returns 4 pi eps / (k^2 (k^2 + eps^2)); singular at k = 0 like the Coulomb
    transform because kappa(eps x) decays like 1/(eps|x|).
    """
    k2 = np.asarray(k2, dtype=float)
    with np.errstate(divide="ignore"):
        return 4.0 * np.pi * eps / (k2 * (k2 + eps * eps))


def coulomb_multiplier(k2):
    """Fourier transform 4 pi / k^2 of 1/|x|."""
    k2 = np.asarray(k2, dtype=float)
    with np.errstate(divide="ignore"):
        return 4.0 * np.pi / k2


@dataclass(frozen=True, eq=False)
class SpectralKernel:
    """DFT of a kernel sampled on the doubled box used for free-space convolution."""

    n: int
    h: float
    label: str
    multiplier: NDArray

    @property
    def min_multiplier(self) -> float:
        return float(self.multiplier.min())


_KERNEL_CACHE: dict[tuple, SpectralKernel] = {}
_KERNEL_LOCK = threading.Lock()
_KERNEL_CACHE_MAX = 16


def _padded_radius(n: int, h: float) -> NDArray:
    m = 2 * n
    idx = np.arange(m)
    d = np.minimum(idx, m - idx) * h
    return np.sqrt(d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2)


def _kernel(kind: str, n: int, h: float, eps: float) -> SpectralKernel:
    key = (kind, n, float(h), float(eps))
    with _KERNEL_LOCK:
        hit = _KERNEL_CACHE.get(key)
        if hit is not None:
            return hit
        r = _padded_radius(n, h)
        if kind == "bp":
            x = eps * r
            vals = np.ones_like(r)
            nz = x > 0
            vals[nz] = -np.expm1(-x[nz]) / x[nz]
            label = f"bopp-podolsky eps={eps:g}"
        elif kind == "coulomb":
            vals = np.empty_like(r)
            nz = r > 0
            vals[nz] = 1.0 / r[nz]
            vals[~nz] = COULOMB_CELL_CONSTANT / h
            label = "coulomb"
        else:
            raise ValueError(kind)
        mult = _rfft(vals).real * h**3
        sk = SpectralKernel(n=n, h=h, label=label, multiplier=mult)
        if len(_KERNEL_CACHE) >= _KERNEL_CACHE_MAX:
            _KERNEL_CACHE.pop(next(iter(_KERNEL_CACHE)))
        _KERNEL_CACHE[key] = sk
        return sk


def bp_kernel(grid: Grid3, eps: float) -> SpectralKernel:
    return _kernel("bp", grid.n, grid.h, eps)


def coulomb_kernel(grid: Grid3) -> SpectralKernel:
    return _kernel("coulomb", grid.n, grid.h, 1.0)


def _free_convolve(source: Field3, kern: SpectralKernel) -> Field3:
    g = source.grid
    n = g.n
    m = (2 * n, 2 * n, 2 * n)
    sh = sfft.rfftn(source.values, s=m, workers=fft_workers())
    full = sfft.irfftn(sh * kern.multiplier, s=m, workers=fft_workers())
    return Field3(g, full[:n, :n, :n])


def convolve_bp(source: Field3, eps: float) -> Field3:
    """Free-space convolution of ``source`` with kappa(eps x), kappa(r) = (1 - e^{-r}) / r."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not np.any(source.values):
        return source.grid.zeros()
    return _free_convolve(source, bp_kernel(source.grid, eps))


def convolve_coulomb(source: Field3) -> Field3:
    """Free-space convolution of ``source`` with 1/|x| (cell-averaged at the origin)."""
    if not np.any(source.values):
        return source.grid.zeros()
    return _free_convolve(source, coulomb_kernel(source.grid))


# --- snapshots ----------------------------------------------------------------

def write_snapshot(f: Field3, path, label: str = "") -> None:
    """JSON header line then n^3 little-endian float64 values, x-major z-fastest."""
    g = f.grid
    header = json.dumps({"center": list(g.center), "L": g.L, "n": g.n, "label": label})
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[Field3, str]:
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    header = json.loads(raw[:cut].decode())
    g = Grid3(tuple(header["center"]), float(header["L"]), int(header["n"]))
    data = np.frombuffer(raw[cut + 1:], dtype="<f8")
    if data.size != g.n**3:
        raise ValueError(f"snapshot holds {data.size} values, expected {g.n ** 3}")
    return Field3(g, data.reshape(g.shape).astype(float)), header.get("label", "")
