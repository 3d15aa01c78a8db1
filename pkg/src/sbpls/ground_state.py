"""Radial ground state of -U'' - (2/r) U' + U = U^p and its rescalings.

The profile is computed by shooting on U(0) with bisection, classifying each
trial value by whether the solution crosses zero (overshoot) or turns upward
before reaching zero (undershoot). The shot is only trusted while the
solution dominates the exponentially growing homogeneous mode; beyond a
matching radius the profile is continued by the decaying mode a e^{-r}/r of
the linearised equation, which removes the growing mode exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp
from scipy.interpolate import BPoly

__all__ = [
    "RadialProfile",
    "GroundConstants",
    "ShootingError",
    "solve_ground_state",
    "shoot_u0",
    "rescale",
    "constants",
    "theta_exponent",
    "write_profile",
    "read_profile",
]

_R_START = 0.02  # switch from the origin series to the integrator
_RTOL, _ATOL = 3e-14, 1e-16  # near the floor scipy accepts for DOP853
_MATCH_NONLIN = 1e-12
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(6)


class ShootingError(RuntimeError):
    """Raised when the shooting bracket cannot be found or refined."""


def _nonlin(u: NDArray | float, p: float):
    return np.sign(u) * np.abs(u) ** p


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Radial solution of -u'' - (2/r) u' + lam^2 u = u^p sampled on a grid.

    Attributes
    ----------
    p : float
        Nonlinearity exponent in (1, 5).
    r, u, du : ndarray
        Radial nodes (starting at 0), values and first derivatives.
    u0 : float
        Value at the origin.
    lam : float
        Mass parameter of the equation solved (1 for the ground state U).
    tail_amplitude : float
        Coefficient ``a`` of the tail model ``a exp(-lam r) / r``.
    r_match : float
        Radius beyond which the profile is the tail model.
    tol : float
        Residual tolerance requested from the solver.
    """

    p: float
    r: NDArray
    u: NDArray
    du: NDArray
    u0: float
    lam: float = 1.0
    tail_amplitude: float = 0.0
    r_match: float = 0.0
    tol: float = 1e-8
    _interp: BPoly = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        derivs = self._node_derivatives(np.asarray(self.r, float), np.asarray(self.u, float), np.asarray(self.du, float))
        object.__setattr__(self, "_interp", BPoly.from_derivatives(self.r, derivs))

    def _node_derivatives(self, r, u, du):
        # higher derivatives from the ODE, so coarser nodes suffice; the
        # second divided differences of a fine grid would amplify roundoff
        lam2, p = self.lam**2, self.p
        d2, d3, d4 = (np.empty_like(u) for _ in range(3))
        i, o = r > 0, r == 0
        ri, ui, u1 = r[i], u[i], du[i]
        nl0, nl1 = _nonlin(ui, p), p * np.abs(ui) ** (p - 1.0)
        nl2 = p * (p - 1.0) * np.sign(ui) * np.abs(ui) ** (p - 2.0)
        d2[i] = -2.0 * u1 / ri + lam2 * ui - nl0
        d3[i] = 2.0 * u1 / ri**2 - 2.0 * d2[i] / ri + lam2 * u1 - nl1 * u1
        d4[i] = (-4.0 * u1 / ri**3 + 4.0 * d2[i] / ri**2 - 2.0 * d3[i] / ri
                 + lam2 * d2[i] - nl2 * u1**2 - nl1 * d2[i])
        # at the origin use the even series u0 + a1 r^2 + a2 r^4
        u0 = u[o]
        a1 = (lam2 * u0 - _nonlin(u0, p)) / 6.0
        a2 = a1 * (lam2 - p * np.abs(u0) ** (p - 1.0)) / 20.0
        d2[o], d3[o], d4[o] = 2.0 * a1, 0.0, 24.0 * a2
        return np.stack([u, du, d2, d3, d4], axis=1)

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    def __call__(self, r, nu: int = 0) -> NDArray:
        """Evaluate the profile (or its ``nu``-th radial derivative, nu <= 2) at ``r``.

        Beyond ``r_max`` the decaying tail ``a exp(-lam r) / r`` is used.
        """
        if nu not in (0, 1, 2):
            raise ValueError("only derivatives up to order 2 are available")
        r = np.abs(np.asarray(r, dtype=float))
        out = self._interp(np.minimum(r, self.r_max), nu)
        far = r > self.r_max
        if np.any(far):
            rf, lam = r[far], self.lam
            e = self.tail_amplitude * np.exp(-lam * rf) / rf
            if nu == 1:
                e = -e * (lam + 1.0 / rf)
            elif nu == 2:
                e = e * (lam**2 + 2.0 * lam / rf + 2.0 / rf**2)
            out = np.array(out, copy=True)
            out[far] = e
        return out

    def ode_residual(self) -> float:
        """Sup-norm of the ODE residual of the interpolant at nodes and panel midpoints."""
        r = np.concatenate([self.r[1:], 0.5 * (self.r[1:] + self.r[:-1])])
        u, du, ddu = self(r), self(r, 1), self(r, 2)
        res = -ddu - 2.0 * du / r + self.lam**2 * u - _nonlin(u, self.p)
        return float(np.max(np.abs(res)))

    def radial_integral(self, integrand) -> float:
        """Integrate ``integrand(r, u, du)`` over [0, r_max] by panel Gauss-Legendre."""
        a, b = self.r[:-1], self.r[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        rr = (mid[:, None] + half[:, None] * _GAUSS_NODES[None, :]).ravel()
        vals = integrand(rr, self(rr), self(rr, 1)).reshape(mid.size, -1)
        return float(np.sum(half * (vals @ _GAUSS_WEIGHTS)))


@dataclass(frozen=True)
class GroundConstants:
    """Scalar constants and moment integrals of a radial profile.

    ``momentsA[j, a]`` is the integral of x_j^a U^2 and ``momentsB[l, b, i]``
    the integral of y_l^b U d_iU, both over R^3.
    """

    p: float
    lam: float
    C0: float
    theta: float
    l2sq: float
    h1sq: float
    lp1: float
    momentsA: NDArray
    momentsB: NDArray
    tail_truncation: float


def theta_exponent(p: float) -> float:
    return (p + 1.0) / (p - 1.0) - 1.5


def _radial_rhs(p):
    def rhs(r, y):
        u, du = y
        return [du, -2.0 * du / r + u - math.copysign(abs(u) ** p, u)]

    return rhs


def _start_state(u0: float, p: float):
    u, du = _origin_series(np.array([_R_START]), u0, p)
    return [float(u[0]), float(du[0])]


def _origin_series(r, u0, p, n_terms: int = 16):
    # u = sum a_k r^{2k}; powers of the series by the J.C.P. Miller recurrence
    a = np.zeros(n_terms)
    w = np.zeros(n_terms)
    a[0], w[0] = u0, u0**p
    for k in range(n_terms - 1):
        if k > 0:
            j = np.arange(1, k + 1)
            w[k] = np.sum((p * j - k + j) * a[j] * w[k - j]) / (k * u0)
        a[k + 1] = (a[k] - w[k]) / ((2 * k + 2) * (2 * k + 3))
    r2 = np.asarray(r, dtype=float) ** 2
    u = np.polynomial.polynomial.polyval(r2, a)
    k = np.arange(1, n_terms)
    du = np.asarray(r) * np.polynomial.polynomial.polyval(r2, 2 * k * a[1:])
    return u, du


def _crosses(r, y):
    return y[0]


_crosses.terminal = True
_crosses.direction = -1


def _turns(r, y):
    return y[1]


_turns.terminal = True
_turns.direction = 1


def _classify(u0, p, r_end, method, rtol, atol):
    """Return +1 for overshoot (zero crossing), -1 for undershoot, 0 if undecided."""
    sol = solve_ivp(
        _radial_rhs(p), (_R_START, r_end), _start_state(u0, p), method=method,
        rtol=rtol, atol=atol, events=(_crosses, _turns),
    )
    if sol.t_events[0].size:
        return 1, float(sol.t_events[0][0])
    if sol.t_events[1].size:
        return -1, float(sol.t_events[1][0])
    return 0, r_end


def shoot_u0(
    p: float,
    method: str = "DOP853",
    rtol: float = 1e-12,
    atol: float = 1e-14,
    r_end: float = 40.0,
    xtol: float = 1e-15,
    max_iter: int = 200,
) -> tuple[float, float, float]:
    """Bisect on U(0) between overshoot and undershoot.

    Returns ``(u0, lo, hi)`` where ``[lo, hi]`` is the final bracket with
    ``lo`` an undershoot and ``hi`` an overshoot.
    """
    if not 1.0 < p < 5.0:
        raise ValueError(f"p must lie in (1, 5), got {p}")
    lo, hi = 1.0, 10.0
    for _ in range(60):
        if _classify(lo, p, r_end, method, rtol, atol)[0] < 0:
            break
        lo *= 0.5
    else:
        raise ShootingError("no undershoot found below U(0) = 1")
    for _ in range(60):
        if _classify(hi, p, r_end, method, rtol, atol)[0] > 0:
            break
        hi *= 2.0
    else:
        raise ShootingError("no overshoot found above U(0) = 10")
    for _ in range(max_iter):
        if hi - lo <= xtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        kind, _ = _classify(mid, p, r_end, method, rtol, atol)
        if kind == 0:
            raise ShootingError(f"trial U(0) = {mid!r} neither crossed zero nor turned before r = {r_end}")
        if kind > 0:
            hi = mid
        else:
            lo = mid
    else:
        raise ShootingError("bisection did not converge")
    return 0.5 * (lo + hi), lo, hi


def _shot(u0: float, p: float, r_end: float = 60.0):
    sol = solve_ivp(
        _radial_rhs(p), (_R_START, r_end), _start_state(u0, p), method="DOP853",
        rtol=_RTOL, atol=_ATOL, dense_output=True, events=(_crosses, _turns),
    )
    return sol, float(sol.t[-1])


def _match_radius(sol, p: float, r_div: float) -> float:
    # first radius where the neglected nonlinearity is below _MATCH_NONLIN,
    # kept clear of the point where the residual growing mode takes over
    probe = np.linspace(1.0, r_div, 4000)
    small = np.nonzero(np.abs(sol.sol(probe)[0]) ** p < _MATCH_NONLIN)[0]
    r_m = float(probe[small[0]]) if small.size else r_div
    return min(r_m, r_div - 3.0)


def _growing(sol, r_m: float) -> float:
    u, du = sol.sol(r_m)
    return 0.5 * (r_m * u + u + r_m * du)


def _polish(p: float, u0: float, max_iter: int = 10):
    """Secant iteration on U(0) that removes the growing mode e^r/r.

    The event classification of the bisection only fixes U(0) to the accuracy
    of its integrator; the coefficient of e^r/r at the matching radius is a
    smooth function of U(0) whose root removes the divergent component.
    """
    x0, x1 = u0, u0 * (1.0 + 1e-11)
    sol0, r0 = _shot(x0, p)
    sol1, r1 = _shot(x1, p)
    for _ in range(max_iter):
        r_m = _match_radius(sol0 if r0 >= r1 else sol1, p, max(r0, r1))
        g0, g1 = _growing(sol0, min(r_m, r0)), _growing(sol1, min(r_m, r1))
        if g1 == g0:
            break
        x2 = x1 - g1 * (x1 - x0) / (g1 - g0)
        if abs(x2 - u0) > 1e-6 * u0:
            raise ShootingError("growing-mode polish moved U(0) away from the bisection value")
        x0, sol0, r0 = x1, sol1, r1
        x1 = x2
        sol1, r1 = _shot(x1, p)
        if abs(x1 - x0) <= 2e-16 * x1:
            break
    r_m = _match_radius(sol1, p, r1)
    if r_m <= 2.0:
        raise ShootingError("matching radius too small; shooting solution diverged early")
    return x1, sol1, r_m


def _radial_grid(r_max: float, n_nodes: int, beta: float = 4.0) -> NDArray:
    # sinh grading: fine in the core, coarse in the exponential tail
    t = np.linspace(0.0, 1.0, n_nodes)
    return r_max * np.sinh(beta * t) / np.sinh(beta)


def solve_ground_state(
    p: float,
    r_max: float = 30.0,
    tol: float = 1e-8,
    n_nodes: int = 501,
) -> RadialProfile:
    """Compute the positive radial ground state U of -Delta U + U = U^p in R^3.

    Parameters
    ----------
    p : float
        Exponent in (1, 5).
    r_max : float
        Outer radius of the stored profile (>= 20).
    tol : float
        Sup-norm tolerance for the ODE residual of the returned profile.

    Raises
    ------
    ShootingError
        If no bracket is found, bisection stalls, or the residual exceeds ``tol``.
    """
    if not 1.0 < p < 5.0:
        raise ValueError(f"p must lie in (1, 5), got {p}")
    if r_max < 20.0:
        raise ValueError("r_max must be at least 20")
    if tol <= 0:
        raise ValueError("tol must be positive")
    # the bracket only has to land inside the secant basin; the polish sets the digits
    u0, _, _ = shoot_u0(p, rtol=1e-10, atol=1e-12, xtol=1e-7)
    u0, sol, r_match = _polish(p, u0)
    r = _radial_grid(r_max, n_nodes)
    um, dum = sol.sol(r_match)
    # decaying and growing amplitudes of the linearised equation (r u)'' = r u
    amp = 0.5 * math.exp(r_match) * (r_match * um - um - r_match * dum)
    grow = 0.5 * math.exp(-r_match) * (r_match * um + um + r_match * dum)

    u = np.empty_like(r)
    du = np.empty_like(r)
    near = r <= _R_START
    u[near], du[near] = _origin_series(r[near], u0, p)
    inner = r <= r_match
    mid = ~near & inner
    ri = r[mid]
    yi = sol.sol(ri)
    u[mid], du[mid] = yi[0], yi[1]
    # subtract through the regular mode sinh(r)/r; its residual is O(grow)
    amp += grow
    rs = r[inner]
    sinhc = np.ones_like(rs)
    dsinhc = np.zeros_like(rs)
    pos = rs > 0
    sinhc[pos] = np.sinh(rs[pos]) / rs[pos]
    dsinhc[pos] = np.cosh(rs[pos]) / rs[pos] - sinhc[pos] / rs[pos]
    u[inner] -= 2.0 * grow * sinhc
    du[inner] -= 2.0 * grow * dsinhc
    u0 = float(u[0])
    ro = r[~inner]
    u[~inner] = amp * np.exp(-ro) / ro
    du[~inner] = -amp * np.exp(-ro) * (1.0 / ro + 1.0 / ro**2)

    prof = RadialProfile(p=p, r=r, u=u, du=du, u0=u0, lam=1.0, tail_amplitude=amp, r_match=r_match, tol=tol)
    res = prof.ode_residual()
    if not res < tol:
        raise ShootingError(f"ODE residual {res:.3e} exceeds tolerance {tol:.1e}")
    if np.any(np.diff(u) >= 0) or np.any(u <= 0):
        raise ShootingError("profile not positive and strictly decreasing")
    return prof


def rescale(prof: RadialProfile, lam: float) -> RadialProfile:
    """Return U_lam(r) = lam^{2/(p-1)} U(lam r), a solution of -Delta u + lam^2 u = u^p."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if lam == 1.0:
        return prof
    s = lam ** (2.0 / (prof.p - 1.0))
    return RadialProfile(
        p=prof.p, r=prof.r / lam, u=s * prof.u, du=s * lam * prof.du, u0=s * prof.u0,
        lam=prof.lam * lam, tail_amplitude=s * prof.tail_amplitude / lam,
        r_match=prof.r_match / lam, tol=prof.tol,
    )


def constants(prof: RadialProfile, max_moment: int = 4) -> GroundConstants:
    """Energy constant, norms and moment tensors of ``prof``.

    All 3D integrals reduce to radial ones: for even ``a`` the angular mean of
    n_j^a over the sphere is 1/(a + 1), and d_iU = U'(r) y_i / r.
    """
    if max_moment < 2:
        raise ValueError("max_moment must be >= 2")
    p, lam = prof.p, prof.lam
    four_pi = 4.0 * math.pi
    l2sq = four_pi * prof.radial_integral(lambda r, u, du: r**2 * u**2)
    grad = four_pi * prof.radial_integral(lambda r, u, du: r**2 * du**2)
    lp1 = four_pi * prof.radial_integral(lambda r, u, du: r**2 * np.abs(u) ** (p + 1))
    h1sq = grad + l2sq

    A = np.zeros((3, max_moment + 1))
    B = np.zeros((3, max_moment + 1, 3))
    for a in range(0, max_moment + 1, 2):
        A[:, a] = four_pi / (a + 1) * prof.radial_integral(lambda r, u, du, a=a: r ** (a + 2) * u**2)
    for b in range(1, max_moment + 1, 2):
        val = four_pi / (b + 2) * prof.radial_integral(lambda r, u, du, b=b: r ** (b + 2) * u * du)
        for i in range(3):
            B[i, b, i] = val
    vals = np.concatenate([[l2sq, h1sq, lp1], A.ravel(), B.ravel()])
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite quadrature; profile tail corrupted")
    # mass beyond r_max under the tail model a e^{-lam r}/r
    tail = 2.0 * math.pi * prof.tail_amplitude**2 * math.exp(-2.0 * lam * prof.r_max) / lam
    return GroundConstants(
        p=p, lam=lam, C0=(0.5 - 1.0 / (p + 1.0)) * lp1, theta=theta_exponent(p),
        l2sq=l2sq, h1sq=h1sq, lp1=lp1, momentsA=A, momentsB=B, tail_truncation=tail,
    )


def write_profile(prof: RadialProfile, path) -> None:
    """Two-column (r, U) text with a JSON header line."""
    header = json.dumps({"p": prof.p, "u0": prof.u0, "r_max": prof.r_max, "tol": prof.tol, "lam": prof.lam})
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for ri, ui in zip(prof.r, prof.u):
            fh.write(f"{ri:.17g} {ui:.17g}\n")


def read_profile(path) -> tuple[dict, NDArray, NDArray]:
    """Read a profile file written by :func:`write_profile` as (header, r, U)."""
    text = Path(path).read_text().splitlines()
    header = json.loads(text[0])
    data = np.loadtxt(text[1:]) if len(text) > 1 else np.zeros((0, 2))
    return header, data[:, 0], data[:, 1]
