"""Finite-dimensional reduction around the manifold of rescaled ground states.

For a concentration center ``xi`` (rescaled variable) the pseudo-critical
point ``z`` solves -Delta z + lam^2 z = z^p with lam^2 = V(eps xi). The
auxiliary equation asks for ``w`` orthogonal (plain H^1) to the tangent
fields ``zdot_i`` and multipliers ``alpha`` such that

    residual(z + w) = sum_i alpha_i (1 - Delta) zdot_i,

that is, the H^1 gradient of E at z + w lies in the tangent span. The reduced
functional is Phi(xi) = E(z + w).

Every field is stored in the frame moving with ``xi``: the grid is centred at
``xi`` and V, K are evaluated at eps times the physical nodes. In that frame
the discrete problem is exactly covariant under translations, and ``z`` is
the discrete ground state of the grid (computed once per lam), so a flat
potential gives w = 0 and alpha = 0 to rounding.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray
from scipy.sparse.linalg import LinearOperator, minres

from .energy import (
    ScenarioPotentials,
    energy_sbp,
    hessian_apply,
    bp_potential,
    nonlinearity,
    potential_field,
    quartic_form,
    residual,
)
from .fields import (
    Field3,
    Grid3,
    dual_norm,
    inner_h1f,
    inner_l2,
    minus_laplacian,
    quad,
    sample,
    spectral_derivative,
    _apply_symbol,
)
from .ground_state import RadialProfile, constants, rescale, solve_ground_state

__all__ = [
    "Box",
    "DEFAULT_BOX",
    "ReductionState",
    "DecompositionReport",
    "GradientReport",
    "DecompositionError",
    "ReductionError",
    "ground_profile",
    "ground_constants",
    "lam_of",
    "discrete_ground_state",
    "make_z",
    "make_tangents",
    "tangent_derivatives",
    "tangent_consistency",
    "constraint_gradient",
    "pseudo_residual_norm",
    "solve_auxiliary",
    "coercivity_check",
    "rayleigh_quotient",
    "reduced_phi",
    "reduced_grad",
    "natural_constraint_matrix",
]


class ReductionError(RuntimeError):
    """Newton divergence or linear-solver stagnation in the auxiliary equation."""


class DecompositionError(RuntimeError):
    """The four-term decomposition of Phi failed its identity check."""


@dataclass(frozen=True)
class Box:
    """Half width and resolution of the moving grid."""

    L: float = 12.0
    n: int = 64

    def grid(self, center=(0.0, 0.0, 0.0)) -> Grid3:
        return Grid3(tuple(np.asarray(center, dtype=float)), self.L, self.n)


DEFAULT_BOX = Box()


@lru_cache(maxsize=8)
def ground_profile(p: float) -> RadialProfile:
    return solve_ground_state(float(p))


@lru_cache(maxsize=8)
def ground_constants(p: float):
    return constants(ground_profile(p))


def lam_of(eps: float, xi, sc: ScenarioPotentials) -> float:
    v = float(sc.V(eps * np.asarray(xi, dtype=float)))
    if not v > 0:
        raise ValueError(f"V(eps xi) = {v:.3g} is not positive")
    return math.sqrt(v)


def _grad_lam(eps: float, xi, sc: ScenarioPotentials, lam: float) -> NDArray:
    return eps * sc.V.grad(eps * np.asarray(xi, dtype=float)) / (2.0 * lam)


# --- discrete ground states ------------------------------------------------------

_GS_CACHE: "OrderedDict[tuple, NDArray]" = OrderedDict()
_GS_LOCK = threading.Lock()
_GS_CACHE_MAX = 48
_GS_TOL = 1e-14


def _petviashvili(u: NDArray, grid: Grid3, p: float, lam: float, max_iter: int = 500) -> NDArray:
    """Fixed point u = M^{p/(p-1)} (-Delta + lam^2)^{-1} N(u) with the stabilising factor M."""
    sym = grid.k2 + lam * lam
    gexp = p / (p - 1.0)
    for it in range(max_iter):
        f = Field3(grid, u)
        Lu = _apply_symbol(f, sym).values
        Nu = nonlinearity(u, p)
        M = float(np.vdot(u, Lu) / np.vdot(u, Nu))
        new = M**gexp * _apply_symbol(Field3(grid, Nu), 1.0 / sym).values
        step = float(np.max(np.abs(new - u)))
        u = new
        if step < _GS_TOL * max(1.0, float(np.max(np.abs(u)))):
            return u
    raise ReductionError(f"discrete ground state did not converge (last step {step:.2e})")


def discrete_ground_state(p: float, lam: float, box: Box = DEFAULT_BOX) -> NDArray:
    """Positive solution of -Delta z + lam^2 z = z^p on the periodic grid, centred at node n/2.

    Values are read-only and cached per (p, lam, box). A new ``lam`` is
    started from the nearest cached state, rescaled to the new mass.
    """
    key = (float(p), float(lam), box.L, box.n)
    with _GS_LOCK:
        hit = _GS_CACHE.get(key)
        if hit is not None:
            _GS_CACHE.move_to_end(key)
            return hit
        near = [k for k in _GS_CACHE if k[0] == key[0] and k[2:] == key[2:]]
        seed = None
        if near:
            k0 = min(near, key=lambda k: abs(k[1] - lam))
            if abs(k0[1] - lam) < 0.05 * lam:
                seed = _GS_CACHE[k0] * (lam / k0[1]) ** (2.0 / (p - 1.0))
    grid = box.grid()
    if seed is None:
        seed = sample(rescale(ground_profile(p), lam), (0.0, 0.0, 0.0), grid).values
    z = _petviashvili(np.array(seed), grid, p, lam)
    z.setflags(write=False)
    with _GS_LOCK:
        _GS_CACHE[key] = z
        while len(_GS_CACHE) > _GS_CACHE_MAX:
            _GS_CACHE.popitem(last=False)
    return z


_DLAM_CACHE: "OrderedDict[tuple, NDArray]" = OrderedDict()


def _linearised_solve(p: float, lam: float, box: Box, rhs: NDArray, label: str) -> NDArray:
    z = discrete_ground_state(p, lam, box)
    grid = box.grid()
    pot = lam * lam - p * np.abs(z) ** (p - 1.0)
    N = z.size
    sym = 1.0 / (grid.k2 + lam * lam)

    def mv(x):
        f = Field3(grid, x.reshape(grid.shape))
        return (minus_laplacian(f).values + pot * f.values).ravel()

    def pc(x):
        return _apply_symbol(Field3(grid, x.reshape(grid.shape)), sym).values.ravel()

    A = LinearOperator((N, N), matvec=mv, dtype=float)
    P = LinearOperator((N, N), matvec=pc, dtype=float)
    v, info = minres(A, rhs.ravel(), rtol=1e-13, maxiter=2000, M=P)
    if info != 0:
        raise ReductionError(f"{label} solve did not converge (info={info})")
    v = v.reshape(grid.shape)
    v.setflags(write=False)
    return v


def _dz_dlam(p: float, lam: float, box: Box, order: int = 1) -> NDArray:
    """First or second lam-derivative of the discrete ground state.

    Differentiating -Delta z + lam^2 z = N(z) gives L v = -2 lam z with
    L = -Delta + lam^2 - N'(z), and once more L v2 = N''(z) v^2 - 4 lam v - 2 z.
    Both right sides are even, so the odd near-kernel of L is not excited.
    """
    key = (float(p), float(lam), box.L, box.n, order)
    with _GS_LOCK:
        hit = _DLAM_CACHE.get(key)
        if hit is not None:
            return hit
    z = discrete_ground_state(p, lam, box)
    if order == 1:
        v = _linearised_solve(p, lam, box, -2.0 * lam * z, "d z / d lam")
    else:
        v1 = _dz_dlam(p, lam, box, 1)
        n2 = p * (p - 1.0) * np.sign(z) * np.abs(z) ** (p - 2.0)
        v = _linearised_solve(p, lam, box, n2 * v1 * v1 - 4.0 * lam * v1 - 2.0 * z, "d2 z / d lam2")
    with _GS_LOCK:
        _DLAM_CACHE[key] = v
        while len(_DLAM_CACHE) > _GS_CACHE_MAX:
            _DLAM_CACHE.popitem(last=False)
    return v


def make_z(eps: float, xi, sc: ScenarioPotentials, box: Box = DEFAULT_BOX) -> Field3:
    """Pseudo-critical point on the grid centred at ``xi``."""
    lam = lam_of(eps, xi, sc)
    return Field3(box.grid(xi), discrete_ground_state(sc.p, lam, box))


def make_tangents(eps: float, xi, sc: ScenarioPotentials, box: Box = DEFAULT_BOX) -> tuple[Field3, Field3, Field3]:
    """Derivatives of xi -> z (fixed frame): d_i lam * dz/dlam - d_i z."""
    lam = lam_of(eps, xi, sc)
    z = make_z(eps, xi, sc, box)
    dl = _grad_lam(eps, xi, sc, lam)
    dz = None
    out = []
    for i in range(3):
        t = -spectral_derivative(z, i)
        if dl[i] != 0.0:
            if dz is None:
                dz = Field3(z.grid, _dz_dlam(sc.p, lam, box))
            t = t + dl[i] * dz
        out.append(t)
    return tuple(out)


def tangent_derivatives(eps: float, xi, sc: ScenarioPotentials, box: Box = DEFAULT_BOX) -> list[list[Field3]]:
    """Fixed-frame second derivatives d_i zdot_j of xi -> z, in closed form.

    With l_j = d_j lam, v = dz/dlam and v2 = d2z/dlam2:
    d_i zdot_j = (d_i l_j) v + l_i l_j v2 - l_j D_i v - l_i D_j v + D_i D_j z,
    where d_i l_j = eps^2 d_ij V / (2 lam) - l_i l_j / lam.
    """
    xi = np.asarray(xi, dtype=float)
    lam = lam_of(eps, xi, sc)
    z = make_z(eps, xi, sc, box)
    dl = _grad_lam(eps, xi, sc, lam)
    Dz = [spectral_derivative(z, i) for i in range(3)]
    DDz = [[spectral_derivative(Dz[j], i) for j in range(3)] for i in range(3)]
    if not np.any(dl) and sc.V.is_constant:
        return DDz
    HV = sc.V.hessian(eps * xi)
    dll = eps**2 * HV / (2.0 * lam) - np.outer(dl, dl) / lam
    v = Field3(z.grid, _dz_dlam(sc.p, lam, box, 1))
    v2 = Field3(z.grid, _dz_dlam(sc.p, lam, box, 2)) if np.any(dl) else z.grid.zeros()
    Dv = [spectral_derivative(v, i) for i in range(3)]
    return [
        [dll[i, j] * v + (dl[i] * dl[j]) * v2 - dl[j] * Dv[i] - dl[i] * Dv[j] + DDz[i][j] for j in range(3)]
        for i in range(3)
    ]


def tangent_consistency(eps: float, xi, sc: ScenarioPotentials, box: Box = DEFAULT_BOX, h: float = 1e-3) -> dict:
    """Cross-check the tangent fields against continuum samples.

    The reference is the central difference in xi of the sampled continuum
    profile U_lam(x - xi) on a fixed grid, with off-node centres. Returns the
    relative H^1 discrepancies of the discrete tangents and of the closed-form
    chain rule, both against that difference quotient.
    """
    xi = np.asarray(xi, dtype=float)
    grid = box.grid(xi)
    prof = ground_profile(sc.p)
    p = sc.p
    lam = lam_of(eps, xi, sc)
    dl = _grad_lam(eps, xi, sc, lam)
    disc = make_tangents(eps, xi, sc, box)
    x, y, zc = grid.coords()
    off = [x - xi[0], y - xi[1], zc - xi[2]]
    r = np.sqrt(off[0] ** 2 + off[1] ** 2 + off[2] ** 2)
    s = 2.0 / (p - 1.0)
    rl = (lam * r).ravel()
    U, dU = prof(rl).reshape(r.shape), prof(rl, 1).reshape(r.shape)
    dzdl = s * lam ** (s - 1.0) * U + lam**s * r * dU
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(r > 0, lam ** (s + 1.0) * dU / r, 0.0)
    res = {"discrete": [], "closed_form": []}
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        zp = sample(rescale(prof, lam_of(eps, xi + e, sc)), xi + e, grid)
        zm = sample(rescale(prof, lam_of(eps, xi - e, sc)), xi - e, grid)
        fd = (zp - zm) * (0.5 / h)
        closed = Field3(grid, dl[i] * dzdl - radial * off[i])
        nrm = math.sqrt(inner_h1f(fd, fd))
        for name, t in (("discrete", disc[i]), ("closed_form", closed)):
            d = t - fd
            res[name].append(math.sqrt(max(inner_h1f(d, d), 0.0)) / nrm)
    return {k: float(max(v)) for k, v in res.items()}


def pseudo_residual_norm(eps: float, xi, sc: ScenarioPotentials, box: Box = DEFAULT_BOX) -> float:
    """Dual norm of the first variation of E at z."""
    return dual_norm(residual(eps, make_z(eps, xi, sc, box), sc))


# --- auxiliary equation ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReductionState:
    eps: float
    xi: NDArray
    lam: float
    z: Field3
    tangents: tuple[Field3, Field3, Field3]
    w: Field3
    alpha: NDArray
    residual_dual_norm: float
    constraint_residuals: NDArray
    newton_iterations: int = 0
    linear_iterations: int = 0

    @property
    def u(self) -> Field3:
        return self.z + self.w

    @property
    def w_norm(self) -> float:
        return math.sqrt(max(inner_h1f(self.w, self.w), 0.0))


def _tangent_duals(tangents) -> list[Field3]:
    # (1 - Delta) zdot_i, so that <w | zdot_i>_{H^1} = quad(w b_i)
    return [t + minus_laplacian(t) for t in tangents]


def _aux_residual(eps, sc, z, w, alpha, duals):
    R = residual(eps, z + w, sc)
    F1 = R.values - sum(a * b.values for a, b in zip(alpha, duals))
    F2 = np.array([quad(w * b) for b in duals])
    return Field3(z.grid, F1), F2


def solve_auxiliary(
    eps: float,
    xi,
    sc: ScenarioPotentials,
    box: Box = DEFAULT_BOX,
    tol: float = 1e-10,
    w0: Field3 | None = None,
    alpha0=None,
    max_newton: int = 25,
    max_linear: int = 400,
) -> ReductionState:
    """Newton iteration on (w, alpha) for the auxiliary equation.

    Each step solves the bordered system [[H, B], [B^T, 0]] with MINRES, where
    H is the Hessian of E at z + w and B holds the fields (1 - Delta) zdot_i.
    The block preconditioner diag((-Delta + lam^2)^{-1}, S^{-1}) with
    S = B^T (-Delta + lam^2)^{-1} B is symmetric positive definite.
    """
    xi = np.asarray(xi, dtype=float)
    lam = lam_of(eps, xi, sc)
    z = make_z(eps, xi, sc, box)
    grid = z.grid
    tangents = make_tangents(eps, xi, sc, box)
    duals = _tangent_duals(tangents)
    w = grid.zeros() if w0 is None else Field3(grid, np.array(w0.values))
    alpha = np.zeros(3) if alpha0 is None else np.array(alpha0, dtype=float)
    N = z.values.size
    h3 = grid.cell_volume
    Bm = np.stack([b.values.ravel() for b in duals], axis=1)
    sym = 1.0 / (grid.k2 + lam * lam)

    def pc_field(x):
        return _apply_symbol(Field3(grid, x.reshape(grid.shape)), sym).values.ravel()

    PB = np.stack([pc_field(Bm[:, i]) for i in range(3)], axis=1)
    S = Bm.T @ PB
    Sinv = np.linalg.inv(S)

    def pc(x):
        return np.concatenate([pc_field(x[:N]), Sinv @ x[N:]])

    P = LinearOperator((N + 3, N + 3), matvec=pc, dtype=float)
    lin_total = 0
    F1, F2 = _aux_residual(eps, sc, z, w, alpha, duals)
    fnorm = dual_norm(F1) + float(np.max(np.abs(F2)))
    it = 0
    while fnorm > tol:
        if it >= max_newton:
            raise ReductionError(f"Newton did not converge in {max_newton} steps (|F| = {fnorm:.2e})")
        u = z + w
        phi_uu = bp_potential(eps, u, u, sc) if sc.has_K else None

        def mv(x, u=u, phi_uu=phi_uu):
            dw = Field3(grid, x[:N].reshape(grid.shape))
            top = hessian_apply(eps, u, dw, sc, phi_uu=phi_uu).values.ravel() + Bm @ x[N:]
            return np.concatenate([top, Bm.T @ x[:N]])

        A = LinearOperator((N + 3, N + 3), matvec=mv, dtype=float)
        rhs = np.concatenate([-F1.values.ravel(), -F2 / h3])
        count = [0]

        def cb(_x, count=count):
            count[0] += 1

        x, info = minres(A, rhs, rtol=min(1e-3, max(fnorm, 1e-12)), maxiter=max_linear, M=P, callback=cb)
        lin_total += count[0]
        if info < 0 or not np.all(np.isfinite(x)):
            raise ReductionError(f"bordered MINRES failed (info={info})")
        w = w + Field3(grid, x[:N].reshape(grid.shape))
        alpha = alpha - x[N:]
        F1, F2 = _aux_residual(eps, sc, z, w, alpha, duals)
        new = dual_norm(F1) + float(np.max(np.abs(F2)))
        it += 1
        if not np.isfinite(new) or new > 1e3 * max(fnorm, tol):
            raise ReductionError(f"Newton diverged (|F| {fnorm:.2e} -> {new:.2e}); eps may be too large")
        fnorm = new
    return ReductionState(
        eps=float(eps), xi=xi, lam=lam, z=z, tangents=tangents, w=w, alpha=alpha,
        residual_dual_norm=dual_norm(F1), constraint_residuals=F2,
        newton_iterations=it, linear_iterations=lin_total,
    )


def rayleigh_quotient(eps: float, u: Field3, v: Field3, sc: ScenarioPotentials) -> float:
    """D^2E(u)[v, v] / |v|^2_{H^1}."""
    return inner_l2(v, hessian_apply(eps, u, v, sc)) / inner_h1f(v, v)


def _smooth_probe(grid: Grid3, rng: np.random.Generator, width: float = 3.0) -> Field3:
    noise = Field3(grid, rng.standard_normal(grid.shape))
    smooth = _apply_symbol(noise, np.exp(-grid.k2 / 4.0))
    ox, oy, oz = grid.offsets()
    env = np.exp(-(ox**2 + oy**2 + oz**2) / (2.0 * width**2))
    return Field3(grid, smooth.values * env)


def coercivity_check(
    eps: float, xi, sc: ScenarioPotentials, n_probe: int = 8, box: Box = DEFAULT_BOX, seed: int = 0,
) -> float:
    """Minimum Rayleigh quotient of D^2E(z) over random smooth probes.

    Probes are projected H^1-orthogonal to span{z, zdot_1, zdot_2, zdot_3}.
    """
    z = make_z(eps, xi, sc, box)
    basis = [z, *make_tangents(eps, xi, sc, box)]
    ortho: list[Field3] = []
    for b in basis:
        for q in ortho:
            b = b - inner_h1f(b, q) * q
        ortho.append(b * (1.0 / math.sqrt(inner_h1f(b, b))))
    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(n_probe):
        v = _smooth_probe(z.grid, rng)
        for _pass in range(2):
            for q in ortho:
                v = v - inner_h1f(v, q) * q
        best = min(best, rayleigh_quotient(eps, z, v, sc))
    return best


# --- reduced functional ------------------------------------------------------------


@dataclass(frozen=True)
class DecompositionReport:
    """Phi split into the leading energy, the potential, quartic and remainder terms.

    ``leading`` is the energy constant of the grid ground state for mass lam,
    (1/2 - 1/(p+1)) |z|^{p+1}; ``leading_continuum`` is C0 V(eps xi)^theta.
    """

    phi: float
    leading: float
    lambda_term: float
    omega_term: float
    psi_term: float
    leading_continuum: float
    identity_error: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def reduced_phi(
    eps: float, xi, sc: ScenarioPotentials, box: Box = DEFAULT_BOX, state: ReductionState | None = None,
    check: float | None = 1e-10, **solve_kw,
) -> tuple[DecompositionReport, ReductionState]:
    """Phi(xi) = E(z + w) and its four-term decomposition, each term computed on its own."""
    if state is None:
        state = solve_auxiliary(eps, xi, sc, box, **solve_kw)
    z, w, p = state.z, state.w, sc.p
    u = z + w
    phi = energy_sbp(eps, u, sc)
    V = potential_field(sc.V, z.grid, eps)
    dV = V - state.lam**2
    zp1 = quad(Field3(z.grid, np.abs(z.values) ** (p + 1.0)))
    leading = (0.5 - 1.0 / (p + 1.0)) * zp1
    lam_term = 0.5 * quad(dV * z * z) + quad(dV * z * w)
    omega = 0.25 * eps**3 * quartic_form(eps, u, u, u, u, sc) if sc.has_K else 0.0
    wnorm_v = inner_l2(w, minus_laplacian(w)) + quad(V * w * w)
    rem = np.abs(u.values) ** (p + 1.0) - np.abs(z.values) ** (p + 1.0) - (p + 1.0) * nonlinearity(z.values, p) * w.values
    psi = 0.5 * wnorm_v - quad(Field3(z.grid, rem)) / (p + 1.0)
    gc = ground_constants(p)
    total = leading + lam_term + omega + psi
    err = abs(phi - total) / max(abs(phi), 1e-300)
    rep = DecompositionReport(
        phi=phi, leading=leading, lambda_term=lam_term, omega_term=omega, psi_term=psi,
        leading_continuum=gc.C0 * state.lam ** (2.0 * gc.theta), identity_error=err,
    )
    if check is not None and err > check:
        raise DecompositionError(f"decomposition identity off by {err:.2e} (relative)")
    return rep, state


@dataclass(frozen=True)
class GradientReport:
    """Reduced gradient by two routes and their agreement."""

    fd: NDArray
    pairing: NDArray
    discrepancy: float
    tolerance: float
    matrix: NDArray
    alpha: NDArray
    h_xi: float

    @property
    def ok(self) -> bool:
        return self.discrepancy <= self.tolerance

    @property
    def grad(self) -> NDArray:
        return self.fd


def natural_constraint_matrix(state: ReductionState, wdot: list[Field3]) -> NDArray:
    """M_ij = <zdot_i + wdot_i | zdot_j>_{H^1}; grad Phi = M alpha."""
    M = np.empty((3, 3))
    for i in range(3):
        left = state.tangents[i] + wdot[i]
        for j in range(3):
            M[i, j] = inner_h1f(left, state.tangents[j])
    return M


def reduced_grad(
    eps: float, xi, sc: ScenarioPotentials, box: Box = DEFAULT_BOX, h_xi: float = 1e-2,
    state: ReductionState | None = None, strict: bool = False, rel_tol: float = 0.1, abs_tol: float = 1e-8,
    **solve_kw,
) -> tuple[GradientReport, ReductionState, DecompositionReport]:
    """Gradient of Phi by central differences and by the natural-constraint pairing.

    Route one differences each decomposition term separately, which avoids
    the cancellation of the O(1) leading energy. Route two evaluates
    sum_j alpha_j <zdot_i + wdot_i | zdot_j>, with wdot the fixed-frame
    derivative of w: the central difference of the moving-frame values minus
    the spectral derivative d_i w.
    """
    xi = np.asarray(xi, dtype=float)
    rep0, state = reduced_phi(eps, xi, sc, box, state=state, **solve_kw)
    fd = np.zeros(3)
    wdot = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h_xi
        terms = []
        ws = []
        for sgn in (1.0, -1.0):
            st = solve_auxiliary(
                eps, xi + sgn * e, sc, box, w0=Field3(box.grid(xi + sgn * e), state.w.values),
                alpha0=state.alpha, **solve_kw,
            )
            rep, _ = reduced_phi(eps, xi + sgn * e, sc, box, state=st)
            terms.append(np.array([rep.leading, rep.lambda_term, rep.omega_term, rep.psi_term]))
            ws.append(st.w.values)
        fd[i] = float(np.sum(terms[0] - terms[1]) / (2.0 * h_xi))
        moving = Field3(state.w.grid, (ws[0] - ws[1]) / (2.0 * h_xi))
        wdot.append(moving - spectral_derivative(state.w, i))
    M = natural_constraint_matrix(state, wdot)
    pairing = M @ state.alpha
    scale = max(float(np.max(np.abs(fd))), float(np.max(np.abs(pairing))))
    disc = float(np.max(np.abs(fd - pairing)))
    tolv = max(rel_tol * scale, abs_tol)
    out = GradientReport(fd=fd, pairing=pairing, discrepancy=disc, tolerance=tolv, matrix=M, alpha=state.alpha, h_xi=h_xi)
    if strict and not out.ok:
        raise ReductionError(f"reduced gradient routes disagree: {fd} vs {pairing}")
    return out, state, rep0


def constraint_gradient(
    eps: float, xi, sc: ScenarioPotentials, box: Box = DEFAULT_BOX, state: ReductionState | None = None, **solve_kw,
) -> tuple[NDArray, ReductionState]:
    """Gradient of Phi from a single auxiliary solve.

    Differentiating the constraint <w | zdot_j> = 0 along xi gives
    <wdot_i | zdot_j> = -<w | d_i zdot_j>, so the pairing needs no differenced w.
    """
    if state is None:
        state = solve_auxiliary(eps, xi, sc, box, **solve_kw)
    dd = tangent_derivatives(eps, state.xi, sc, box)
    M = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            M[i, j] = inner_h1f(state.tangents[i], state.tangents[j]) - inner_h1f(state.w, dd[i][j])
    return M @ state.alpha, state
