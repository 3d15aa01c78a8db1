"""Critical points of the reduced functional and the solutions they carry.

A critical xi* of Phi gives a genuine discrete critical point u = z + w of
E (the multipliers vanish), which is verified directly through the full
residual. Studies sweep eps and track how eps xi* and |w| shrink.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .asymptotics import AsymptoticSeries, fit_series
from .energy import ScenarioPotentials, residual
from .fields import dual_norm
from .reduction import (
    DEFAULT_BOX,
    Box,
    ReductionState,
    constraint_gradient,
    ground_constants,
    ground_profile,
    reduced_phi,
    solve_auxiliary,
)

__all__ = [
    "CriticalPointError",
    "NaturalConstraintError",
    "CriticalSearch",
    "ConcentrationRecord",
    "ConcentrationStudy",
    "AccumulationReport",
    "MultiplicityReport",
    "find_critical_xi",
    "full_solution",
    "concentration_study",
    "accumulation_test",
    "surrogate_gradient",
    "multiplicity_scan",
]


class CriticalPointError(RuntimeError):
    """Newton on the reduced gradient left its ball or stalled."""


class NaturalConstraintError(RuntimeError):
    """Reduced gradient vanished but the full residual did not."""


@dataclass(frozen=True, eq=False)
class CriticalSearch:
    xi_star: NDArray
    grad: NDArray
    grad_norm: float
    iterations: int
    index_sign: int
    jacobian: NDArray
    state: ReductionState


def _jacobian(eps, xi, sc, box, g0, h, tol, state):
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        st = solve_auxiliary(eps, xi + e, sc, box, tol=tol, w0=_moved(state, box, xi + e), alpha0=state.alpha)
        g, _ = constraint_gradient(eps, xi + e, sc, box, state=st)
        J[:, k] = (g - g0) / h
    return J


def _moved(state: ReductionState, box: Box, xi):
    from .fields import Field3

    return Field3(box.grid(xi), state.w.values)


def find_critical_xi(
    eps: float,
    sc: ScenarioPotentials,
    guess,
    radius: float,
    box: Box = DEFAULT_BOX,
    grad_tol: float = 1e-11,
    aux_tol: float = 1e-12,
    max_iter: int = 30,
    fd_step: float = 1e-2,
    rcond: float = 1e-10,
) -> CriticalSearch:
    """Newton on the reduced gradient, started at ``guess`` and confined to a ball.

    The Jacobian is built by forward differences of the reduced gradient at the
    start and refreshed by Broyden updates; the step is a least-squares solve,
    so a continuum of critical points does not break it. The sign of the
    Jacobian determinant at the root is recorded as the local index.
    """
    guess = np.asarray(guess, dtype=float)
    xi = guess.copy()
    state = solve_auxiliary(eps, xi, sc, box, tol=aux_tol)
    g, _ = constraint_gradient(eps, xi, sc, box, state=state)
    J = None
    it = 0
    while np.linalg.norm(g) > grad_tol:
        if it >= max_iter:
            raise CriticalPointError(f"no critical point after {max_iter} Newton steps (|grad| = {np.linalg.norm(g):.2e})")
        if J is None:
            J = _jacobian(eps, xi, sc, box, g, fd_step, aux_tol, state)
        step = -np.linalg.lstsq(J, g, rcond=rcond)[0]
        new = xi + step
        if np.linalg.norm(new - guess) > radius:
            raise CriticalPointError(
                f"Newton left the ball of radius {radius:.3g} around the guess (|step| = {np.linalg.norm(step):.3g})"
            )
        st = solve_auxiliary(eps, new, sc, box, tol=aux_tol, w0=_moved(state, box, new), alpha0=state.alpha)
        g_new, _ = constraint_gradient(eps, new, sc, box, state=st)
        dg = g_new - g
        if np.dot(step, step) > 0:
            J = J + np.outer(dg - J @ step, step) / np.dot(step, step)
        xi, g, state = new, g_new, st
        it += 1
        if it % 8 == 0:
            J = None
    if J is None or it == 0:
        J = _jacobian(eps, xi, sc, box, g, fd_step, aux_tol, state) if not _flat(sc) else np.zeros((3, 3))
    index = int(np.sign(np.linalg.det(J)))
    return CriticalSearch(xi, g, float(np.linalg.norm(g)), it, index, J, state)


def _flat(sc: ScenarioPotentials) -> bool:
    return sc.V.is_constant and not sc.has_K


@dataclass(frozen=True)
class ConcentrationRecord:
    eps: float
    xi_star: NDArray
    full_residual_dual_norm: float
    w_norm_h1: float
    distance_to_expected: float
    phi_value: float
    grad_norm: float = math.nan
    index_sign: int = 0
    newton_iterations: int = 0
    grad_v_norm: float = math.nan
    identity_error: float = math.nan

    def as_row(self) -> dict:
        return {
            "eps": self.eps,
            "xi1": self.xi_star[0], "xi2": self.xi_star[1], "xi3": self.xi_star[2],
            "dist": self.distance_to_expected,
            "w_norm": self.w_norm_h1,
            "resid": self.full_residual_dual_norm,
            "phi": self.phi_value,
            "grad_phi": self.grad_norm,
            "index": self.index_sign,
        }


def full_solution(
    eps: float, xi_star, sc: ScenarioPotentials, box: Box = DEFAULT_BOX, tol: float = 1e-6,
    x0=(0.0, 0.0, 0.0), state: ReductionState | None = None, search: CriticalSearch | None = None,
) -> ConcentrationRecord:
    """Assemble u = z + w at xi* and verify it is a critical point of E on the grid."""
    xi_star = np.asarray(xi_star, dtype=float)
    if state is None:
        state = solve_auxiliary(eps, xi_star, sc, box, tol=1e-12)
    full = dual_norm(residual(eps, state.u, sc))
    g, _ = constraint_gradient(eps, xi_star, sc, box, state=state)
    if full > tol:
        raise NaturalConstraintError(
            f"full residual {full:.2e} exceeds {tol:.1e} at xi* (reduced gradient {np.linalg.norm(g):.2e})"
        )
    rep, _ = reduced_phi(eps, xi_star, sc, box, state=state)
    x0 = np.asarray(x0, dtype=float)
    return ConcentrationRecord(
        eps=float(eps), xi_star=xi_star, full_residual_dual_norm=full, w_norm_h1=state.w_norm,
        distance_to_expected=float(np.linalg.norm(eps * xi_star - x0)), phi_value=rep.phi,
        grad_norm=float(np.linalg.norm(g)),
        index_sign=search.index_sign if search else 0,
        newton_iterations=search.iterations if search else 0,
        grad_v_norm=float(np.linalg.norm(sc.V.grad(eps * xi_star))),
        identity_error=rep.identity_error,
    )


@dataclass
class ConcentrationStudy:
    records: list[ConcentrationRecord]
    w_norm: AsymptoticSeries | None
    distance: AsymptoticSeries | None
    notes: list[str] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max(r.full_residual_dual_norm for r in self.records)

    @property
    def distance_decreasing(self) -> bool:
        d = [r.distance_to_expected for r in self.records]
        return all(b <= a for a, b in zip(d, d[1:]))

    def as_dict(self) -> dict:
        return {
            "records": [{k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in r.as_row().items()} for r in self.records],
            "w_norm": self.w_norm.as_dict() if self.w_norm else None,
            "distance": self.distance.as_dict() if self.distance else None,
            "max_residual": self.max_residual,
            "distance_decreasing": self.distance_decreasing,
            "notes": self.notes,
        }


def concentration_study(
    sc: ScenarioPotentials, eps_sweep, box: Box = DEFAULT_BOX, x0=(0.0, 0.0, 0.0), radius: float = 0.5,
    tol: float = 1e-6, grad_tol: float = 1e-11, floor: float = 1e-13,
) -> ConcentrationStudy:
    """Sweep eps downward, continuing eps xi* from the previous root.

    ``radius`` is the search ball in the original variables, so the ball in
    xi has radius ``radius / eps``.
    """
    x0 = np.asarray(x0, dtype=float)
    eps = sorted((float(e) for e in eps_sweep), reverse=True)
    records = []
    phys = x0.copy()
    for e in eps:
        search = find_critical_xi(e, sc, phys / e, radius / e, box, grad_tol=grad_tol)
        rec = full_solution(e, search.xi_star, sc, box, tol=tol, x0=x0, state=search.state, search=search)
        records.append(rec)
        phys = e * search.xi_star
    notes = []

    def _fit(vals, label):
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                s = fit_series(eps, vals, floor=floor)
            if caught:
                notes.append(f"{label}: {caught[0].message}")
            return s
        except ValueError as exc:
            notes.append(f"{label}: {exc}")
            return None

    return ConcentrationStudy(
        records,
        _fit([r.w_norm_h1 for r in records], "w_norm"),
        _fit([r.distance_to_expected for r in records], "distance"),
        notes,
    )


@dataclass
class AccumulationReport:
    """Pipeline started at a point x1 that is not critical for V."""

    x1: NDArray
    outcomes: list[dict]

    @property
    def accumulates_at_x1(self) -> bool:
        """True only if the finest eps returned a critical point near x1 where grad V is not small."""
        last = self.outcomes[-1]
        return bool(last["converged"] and last["distance_to_x1"] < 0.1 * np.linalg.norm(self.x1) and last["grad_v"] > 1e-3)

    def as_dict(self) -> dict:
        return {"x1": self.x1.tolist(), "outcomes": self.outcomes, "accumulates_at_x1": self.accumulates_at_x1}


def accumulation_test(
    sc: ScenarioPotentials, x1, eps_sweep, box: Box = DEFAULT_BOX, radius: float | None = None, max_iter: int = 12,
) -> AccumulationReport:
    """Run the critical-point search from x1 / eps inside a ball around x1 and record what happens."""
    x1 = np.asarray(x1, dtype=float)
    radius = radius if radius is not None else 0.5 * float(np.linalg.norm(x1))
    out = []
    for e in sorted((float(v) for v in eps_sweep), reverse=True):
        item = {"eps": e, "converged": False, "distance_to_x1": math.nan, "grad_v": math.nan, "message": ""}
        try:
            s = find_critical_xi(e, sc, x1 / e, radius / e, box, max_iter=max_iter)
            y = e * s.xi_star
            item.update(converged=True, distance_to_x1=float(np.linalg.norm(y - x1)),
                        grad_v=float(np.linalg.norm(sc.V.grad(y))), xi_star=s.xi_star.tolist())
        except CriticalPointError as exc:
            item["message"] = str(exc)
        out.append(item)
    return AccumulationReport(x1, out)


# --- multiplicity scan ------------------------------------------------------------------


def surrogate_gradient(eps: float, pts: NDArray, sc: ScenarioPotentials, n: int = 10, L: float = 5.0, chunk: int = 64) -> NDArray:
    """Gradient in xi of E(z_xi) with the profile mass frozen at lam = 1, for many xi at once.

    This is eps/2 times the average of grad V(eps(xi + y)) against U(y)^2,
    plus eps (theta C0 V^{theta-1} - |U|^2/2) grad V(eps xi). It carries the
    O(eps^2) terms that split a degenerate critical set, and costs a coarse
    quadrature per point instead of a solve.
    """
    prof = ground_profile(sc.p)
    gc = ground_constants(sc.p)
    h = 2.0 * L / n
    ax = -L + h * (np.arange(n) + 0.5)
    y = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    w = prof(np.linalg.norm(y, axis=1)) ** 2 * h**3
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    out = np.empty_like(pts)
    for start in range(0, len(pts), chunk):
        xi = pts[start:start + chunk]
        gV = sc.V.grad(eps * (xi[:, None, :] + y[None, :, :]))
        avg = np.einsum("y,kyd->kd", w, gV)
        Vx = sc.V(eps * xi)
        coef = gc.theta * gc.C0 * Vx ** (gc.theta - 1.0) - 0.5 * gc.l2sq
        out[start:start + chunk] = 0.5 * eps * avg + eps * coef[:, None] * sc.V.grad(eps * xi)
    return out


@dataclass
class MultiplicityReport:
    eps: float
    seeds: int
    candidates: list[NDArray]
    verified: list[ConcentrationRecord]
    failures: list[str]

    @property
    def n_distinct(self) -> int:
        return len(self.verified)

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "seeds": self.seeds,
            "candidates": [c.tolist() for c in self.candidates],
            "verified": [{k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in r.as_row().items()} for r in self.verified],
            "failures": self.failures,
            "n_distinct": self.n_distinct,
        }


def _surrogate_newton(eps, seeds, sc, iters=40, h=1e-3, tol=1e-9):
    """Newton on the surrogate gradient in the (xi1, xi2) plane, batched over seeds.

    Steps are capped at 0.5 in the original variables; converged seeds are frozen.
    """
    xi = np.column_stack([seeds, np.zeros(len(seeds))])
    g = surrogate_gradient(eps, xi, sc)[:, :2]
    alive = np.linalg.norm(g, axis=1) >= tol
    for _ in range(iters):
        if not np.any(alive):
            break
        idx = np.flatnonzero(alive)
        x = xi[idx]
        J = np.empty((len(idx), 2, 2))
        for k in range(2):
            e = np.zeros(3)
            e[k] = h
            J[:, :, k] = (surrogate_gradient(eps, x + e, sc)[:, :2] - g[idx]) / h
        step = -np.linalg.solve(J + 1e-300 * np.eye(2), g[idx][:, :, None])[:, :, 0]
        cap = 0.5 / eps
        scale = np.minimum(1.0, cap / np.maximum(np.linalg.norm(step, axis=1), 1e-300))
        xi[idx, :2] += step * scale[:, None]
        g[idx] = surrogate_gradient(eps, xi[idx], sc)[:, :2]
        alive[idx] = np.linalg.norm(g[idx], axis=1) >= tol
    return xi, np.linalg.norm(g, axis=1)


def multiplicity_scan(
    eps: float, sc: ScenarioPotentials, r_in: float, r_out: float, box: Box = DEFAULT_BOX,
    n_grid: int = 32, cluster_radius: float = 0.05, max_polish: int = 8, tol: float = 1e-6,
) -> MultiplicityReport:
    """Multi-start search for critical points of Phi near a critical circle of V in the x3 = 0 plane.

    A ``n_grid`` x ``n_grid`` lattice over the square around the annulus
    r_in < |x| < r_out (original variables) seeds a batched Newton on the
    surrogate gradient. Endpoints are clustered by distance in the original
    variables; each cluster representative is polished with Newton on the true
    reduced gradient and verified as a full critical point.
    """
    ax = np.linspace(-r_out, r_out, n_grid)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    rad = np.hypot(X, Y)
    mask = (rad > r_in) & (rad < r_out)
    seeds = np.column_stack([X[mask], Y[mask]]) / eps
    ends, gnorm = _surrogate_newton(eps, seeds, sc)
    phys = ends * eps
    ok = (gnorm < 1e-6) & (np.hypot(phys[:, 0], phys[:, 1]) > r_in) & (np.hypot(phys[:, 0], phys[:, 1]) < r_out)
    reps: list[NDArray] = []
    for p in phys[ok]:
        if all(np.linalg.norm(p - q) > cluster_radius for q in reps):
            reps.append(p)
    verified, failures = [], []
    for p in reps[:max_polish]:
        try:
            s = find_critical_xi(eps, sc, p / eps, cluster_radius * 4 / eps, box)
            rec = full_solution(eps, s.xi_star, sc, box, tol=tol, x0=p, state=s.state, search=s)
        except (CriticalPointError, NaturalConstraintError) as exc:
            failures.append(f"seed {p.round(4).tolist()}: {exc}")
            continue
        y = eps * rec.xi_star
        if all(np.linalg.norm(y - eps * v.xi_star) > 0.5 * cluster_radius for v in verified):
            verified.append(rec)
    return MultiplicityReport(float(eps), int(len(seeds)), reps, verified, failures)
