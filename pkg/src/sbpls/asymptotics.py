"""Leading vector fields of the reduced gradient and order-of-convergence fits.

Scenarios here are normalised so that the concentration point is the origin
and V(0) = 1. With U the ground state of the limiting problem, the reduced
gradient behaves like

    grad Phi(xi) ~ -eps^2 G1(xi)   (V non-degenerate at 0)
    grad Phi(xi) ~ -eps^n f(xi)    (V vanishing to order n at 0, K = 0 or n < 2m + 3)
    grad Phi(xi) ~ -eps^7 g(xi)    (V = 1, K vanishing to order m = 2 at 0)

The minus sign is checked numerically by the studies below.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .energy import ScenarioPotentials
from .fields import Grid3
from .ground_state import GroundConstants, RadialProfile, constants, rescale
from .potentials import PotentialSpec, pure_derivatives, vanishing_order

__all__ = [
    "AsymptoticSeries",
    "CTilde",
    "NOISE_FLOOR",
    "fit_order",
    "fit_series",
    "fit_leading_coefficient",
    "gamma1",
    "gamma1_closed_form",
    "f_vector",
    "f_vector_quadrature",
    "g_vector",
    "g_jacobian",
    "ctilde",
    "ctilde_monte_carlo",
    "check_normalised",
    "REGIMES",
    "ExpansionReport",
    "LeadingOrderReport",
    "leading_field",
    "expansion_study",
    "leading_order_study",
]

NOISE_FLOOR = 1e-14


@dataclass(frozen=True)
class AsymptoticSeries:
    eps_values: NDArray
    values: NDArray
    fitted_slope: float = math.nan
    fitted_intercept: float = math.nan
    r_squared: float = math.nan
    dropped: int = 0

    def as_dict(self) -> dict:
        return {
            "eps": [float(e) for e in self.eps_values],
            "values": np.asarray(self.values, dtype=float).tolist(),
            "slope": self.fitted_slope,
            "intercept": self.fitted_intercept,
            "r_squared": self.r_squared,
            "dropped": self.dropped,
        }


def _usable(eps, values, floor):
    eps = np.asarray(eps, dtype=float)
    vals = np.abs(np.asarray(values, dtype=float))
    if vals.ndim > 1:
        vals = np.linalg.norm(vals.reshape(len(eps), -1), axis=1)
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps values must be strictly decreasing")
    keep = np.isfinite(vals) & (vals > floor)
    return eps, vals, keep


def fit_series(eps, values, floor: float = NOISE_FLOOR) -> AsymptoticSeries:
    """Least-squares slope of log|value| against log(eps).

    Vector values are reduced to their Euclidean norm. Entries at or below
    ``floor`` are dropped with a warning; fewer than four survivors is an error.
    """
    eps, vals, keep = _usable(eps, values, floor)
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        warnings.warn(f"dropping {dropped} values below the noise floor {floor:.1e}", RuntimeWarning, stacklevel=2)
    if np.count_nonzero(keep) < 4:
        raise ValueError("order fit needs at least 4 usable points")
    x, y = np.log(eps[keep]), np.log(vals[keep])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return AsymptoticSeries(eps, np.asarray(values, dtype=float), float(slope), float(icpt), r2, dropped)


def fit_order(series, values=None, floor: float = NOISE_FLOOR) -> float:
    """Slope of a series; accepts an :class:`AsymptoticSeries` or ``(eps, values)``."""
    if isinstance(series, AsymptoticSeries):
        return fit_series(series.eps_values, series.values, floor).fitted_slope
    return fit_series(series, values, floor).fitted_slope


def fit_leading_coefficient(eps, values, order: float, floor: float = NOISE_FLOOR) -> tuple[float, int]:
    """Extrapolate values / eps^order to eps = 0 with a linear model c0 + c1 eps.

    Returns (c0, points used). Points with |value| at or below ``floor`` are
    skipped; at least three are needed.
    """
    eps = np.asarray(eps, dtype=float)
    vals = np.asarray(values, dtype=float)
    keep = np.isfinite(vals) & (np.abs(vals) > floor)
    if np.count_nonzero(keep) < 3:
        raise ValueError("leading-coefficient fit needs at least 3 points above the noise floor")
    ratio = vals[keep] / eps[keep] ** order
    c1, c0 = np.polyfit(eps[keep], ratio, 1)
    return float(c0), int(np.count_nonzero(keep))


# --- closed-form vector fields ------------------------------------------------------


def check_normalised(spec: PotentialSpec, value: float | None = 1.0, atol: float = 1e-12) -> None:
    if value is not None and abs(float(spec(np.zeros(3))) - value) > atol:
        raise ValueError(f"scenario not normalised: potential at the origin is {float(spec(np.zeros(3)))}, expected {value}")


def gamma1(xi, sc: ScenarioPotentials, gc: GroundConstants) -> NDArray:
    """G1(xi)_i = d_i^2 V(0) xi_i int x_i U d_i U."""
    check_normalised(sc.V)
    if np.linalg.norm(sc.V.grad(np.zeros(3))) > 1e-12:
        raise ValueError("scenario not normalised: grad V(0) is not zero")
    xi = np.asarray(xi, dtype=float)
    d2 = pure_derivatives(sc.V, np.zeros(3), 2)
    return d2 * xi * np.array([gc.momentsB[i, 1, i] for i in range(3)])


def gamma1_closed_form(xi, sc: ScenarioPotentials, gc: GroundConstants) -> NDArray:
    """The same field after integration by parts: -(1/2) |U|_2^2 d_i^2 V(0) xi_i."""
    d2 = pure_derivatives(sc.V, np.zeros(3), 2)
    return -0.5 * gc.l2sq * d2 * np.asarray(xi, dtype=float)


def _declared_order(spec: PotentialSpec, order: int, start: int, name: str) -> None:
    found = vanishing_order(spec, np.zeros(3), start=start, max_order=max(order, start))
    if found != order:
        raise ValueError(f"{name} vanishes to order {found} at the origin, declared {order}")
    mixed = [a for a, v in spec.derivative_tensor(np.zeros(3), order).items() if max(a) < order and abs(v) > 1e-12]
    if mixed:
        raise ValueError(f"{name} has non-zero mixed derivatives of order {order}: {mixed}")


def _moments(prof: RadialProfile, lam: float, max_moment: int) -> GroundConstants:
    return constants(rescale(prof, lam) if lam != 1.0 else prof, max_moment=max(2, max_moment))


def f_vector(xi, n: int, sc: ScenarioPotentials, prof: RadialProfile, gc: GroundConstants | None = None) -> NDArray:
    """f(xi)_i = (1/n!) d_i^n V(0) sum_a binom(n, a) xi_i^{n-a} int x_i^a U d_i U."""
    check_normalised(sc.V)
    _declared_order(sc.V, n, 1, "V")
    gc = gc if gc is not None and gc.momentsB.shape[1] > n else _moments(prof, 1.0, n)
    xi = np.asarray(xi, dtype=float)
    dn = pure_derivatives(sc.V, np.zeros(3), n)
    out = np.zeros(3)
    for i in range(3):
        s = sum(math.comb(n, a) * xi[i] ** (n - a) * gc.momentsB[i, a, i] for a in range(n + 1))
        out[i] = dn[i] * s / math.factorial(n)
    return out


def f_vector_quadrature(xi, n: int, sc: ScenarioPotentials, prof: RadialProfile, grid: Grid3 | None = None) -> NDArray:
    """Brute-force 3D quadrature of (1/n!) int D^nV(0)[x, ..., x] U(x - xi) d_iU(x - xi) dx."""
    xi = np.asarray(xi, dtype=float)
    grid = grid or Grid3(tuple(xi), 14.0, 64)
    x = grid.scaled_points(1.0)
    y = x - xi
    r = np.linalg.norm(y, axis=-1)
    U = prof(r.ravel()).reshape(r.shape)
    dU = prof(r.ravel(), 1).reshape(r.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(r > 0, dU / r, 0.0)
    poly = np.zeros(r.shape)
    for a, val in sc.V.derivative_tensor(np.zeros(3), n).items():
        if val != 0.0:
            mono = math.factorial(n) / math.prod(math.factorial(k) for k in a)
            poly += val * mono * x[..., 0] ** a[0] * x[..., 1] ** a[1] * x[..., 2] ** a[2]
    out = np.array([np.sum(poly * U * radial * y[..., i]) for i in range(3)]) * grid.cell_volume
    return out / math.factorial(n)


@dataclass(frozen=True)
class CTilde:
    """C[a][b][i][j][l] = int x_j^a U^2(x) dx * int y_l^b U(y) d_iU(y) dy for the profile of mass lam."""

    tensor: NDArray
    lambda_x0: float
    m: int

    def __getitem__(self, key):
        return self.tensor[key]


def ctilde(m: int, lambda_x0: float, prof: RadialProfile) -> CTilde:
    """Separable evaluation of the coupling tensor from the moment integrals."""
    gc = _moments(prof, lambda_x0, m)
    A = gc.momentsA[:, : m + 1]
    B = gc.momentsB[:, : m + 1, :]
    T = np.einsum("ja,lbi->abijl", A, B)
    return CTilde(T, float(lambda_x0), int(m))


def _radial_sampler(prof: RadialProfile, rng: np.random.Generator, size: int) -> NDArray:
    """Points in R^3 with density proportional to U(|x|)^2 (inverse CDF in r, uniform direction)."""
    r = np.linspace(0.0, prof.r_max, 20001)
    dens = r**2 * prof(r) ** 2
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
    cdf /= cdf[-1]
    radius = np.interp(rng.random(size), cdf, r)
    d = rng.standard_normal((size, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius[:, None]


def ctilde_monte_carlo(m: int, lambda_x0: float, prof: RadialProfile, n_samples: int = 1_000_000, seed: int = 0):
    """Monte-Carlo estimate of the 6D coupling integrals, straight from the double integral.

    x and y are drawn independently from the density U^2 / |U|_2^2 (Philox
    generator), and the sample mean of x_j^a y_l^b d_iU(y)/U(y) is scaled by
    |U|_2^4. Returns (estimate, standard error) tensors of the same layout.
    """
    p = prof if lambda_x0 == 1.0 else rescale(prof, lambda_x0)
    rng = np.random.Generator(np.random.Philox(seed))
    l2sq = constants(p, max_moment=2).l2sq
    est = np.zeros((m + 1, m + 1, 3, 3, 3))
    err = np.zeros_like(est)
    chunk = 200_000
    sums = np.zeros_like(est)
    sq = np.zeros_like(est)
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        x = _radial_sampler(p, rng, k)
        y = _radial_sampler(p, rng, k)
        ry = np.linalg.norm(y, axis=1)
        ratio = p(ry, 1) / np.maximum(p(ry), 1e-300) / np.maximum(ry, 1e-300)
        xp = np.stack([x**a for a in range(m + 1)])            # (a, k, j)
        yp = np.stack([y**b for b in range(m + 1)])            # (b, k, l)
        gi = y * ratio[:, None]                                # (k, i)
        for a in range(m + 1):
            for b in range(m + 1):
                val = np.einsum("kj,kl,ki->kijl", xp[a], yp[b], gi)
                sums[a, b] += val.sum(axis=0)
                sq[a, b] += (val**2).sum(axis=0)
        done += k
    mean = sums / n_samples
    var = np.maximum(sq / n_samples - mean**2, 0.0)
    est = mean * l2sq**2
    err = np.sqrt(var / n_samples) * l2sq**2
    return est, err


def g_vector(xi, m: int, sc: ScenarioPotentials, prof: RadialProfile, ct: CTilde | None = None) -> NDArray:
    """g(xi)_i = (1/m!^2) sum d_j^m K d_l^m K binom(m,a) binom(m,b) xi_j^{m-a} xi_l^{m-b} C[a][b][i][j][l].

    Derivatives of K are taken at the origin; the profile has mass lam = V(0)^{1/2}.
    """
    if abs(float(sc.K(np.zeros(3)))) > 1e-12:
        raise ValueError("K must vanish at the origin")
    _declared_order(sc.K, m, 0, "K")
    lam = math.sqrt(float(sc.V(np.zeros(3))))
    ct = ct if ct is not None and ct.m == m and ct.lambda_x0 == lam else ctilde(m, lam, prof)
    dK = pure_derivatives(sc.K, np.zeros(3), m)
    return _g_from(np.asarray(xi, dtype=float), m, dK, ct)


def _g_from(xi, m, dK, ct: CTilde) -> NDArray:
    c = np.array([math.comb(m, a) for a in range(m + 1)], dtype=float)
    P = np.array([[c[a] * xi[j] ** (m - a) * dK[j] for j in range(3)] for a in range(m + 1)])  # (a, j)
    return np.einsum("aj,bl,abijl->i", P, P, ct.tensor) / math.factorial(m) ** 2


def g_jacobian(xi, m: int, dK, ct: CTilde, h: float = 1e-4) -> NDArray:
    """Central-difference Jacobian of g at ``xi`` for pure derivatives ``dK`` of K."""
    xi = np.asarray(xi, dtype=float)
    dK = np.asarray(dK, dtype=float)
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (_g_from(xi + e, m, dK, ct) - _g_from(xi - e, m, dK, ct)) / (2.0 * h)
    return J


# --- expansion studies -----------------------------------------------------------------

REGIMES = ("nondegenerate", "degenerate-n", "degenerate-m")


@dataclass
class PanelEntry:
    xi: NDArray
    leading: NDArray
    grads: NDArray
    remainder: AsymptoticSeries
    coefficients: dict = field(default_factory=dict)
    passed: bool = True

    def as_dict(self) -> dict:
        return {
            "xi": self.xi.tolist(),
            "leading_field": self.leading.tolist(),
            "grad_phi": self.grads.tolist(),
            "remainder": self.remainder.as_dict(),
            "coefficients": self.coefficients,
            "pass": self.passed,
        }


@dataclass
class ExpansionReport:
    regime: str
    gamma: int
    eps_values: NDArray
    panel: list[PanelEntry]
    slope_threshold: float
    coefficient_tolerance: float
    max_identity_error: float
    rows: list[dict] = field(default_factory=list)

    @property
    def min_slope(self) -> float:
        return min(e.remainder.fitted_slope for e in self.panel)

    @property
    def max_coefficient_error(self) -> float:
        errs = [c["rel_error"] for e in self.panel for c in e.coefficients.values()]
        return max(errs) if errs else 0.0

    @property
    def passed(self) -> bool:
        return (
            self.min_slope >= self.slope_threshold
            and self.max_coefficient_error <= self.coefficient_tolerance
            and self.max_identity_error <= 1e-10
        )

    def as_dict(self) -> dict:
        return {
            "regime": self.regime,
            "gamma": self.gamma,
            "eps": [float(e) for e in self.eps_values],
            "slope_threshold": self.slope_threshold,
            "min_remainder_slope": self.min_slope,
            "max_coefficient_error": self.max_coefficient_error,
            "max_identity_error": self.max_identity_error,
            "panel": [e.as_dict() for e in self.panel],
            "pass": self.passed,
        }


def leading_field(regime: str, order: int | None, xi, sc: ScenarioPotentials, prof: RadialProfile) -> tuple[int, NDArray]:
    """(gamma, closed-form field) such that grad Phi ~ -eps^gamma * field."""
    if regime == "nondegenerate":
        return 2, gamma1(xi, sc, constants(prof, max_moment=2))
    if regime == "degenerate-n":
        return int(order), f_vector(xi, int(order), sc, prof)
    if regime == "degenerate-m":
        return 2 * int(order) + 3, g_vector(xi, int(order), sc, prof)
    raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def expansion_study(
    sc: ScenarioPotentials,
    regime: str,
    eps_sweep,
    panel,
    order: int | None = None,
    box=None,
    delta_min: float = 0.2,
    coefficient_tolerance: float = 0.1,
    relevance: float = 0.1,
    tol: float = 1e-12,
    floor: float | None = None,
    workers: int | None = None,
) -> ExpansionReport:
    """Compare grad Phi with -eps^gamma times the closed-form leading field on a xi panel.

    For each panel point the remainder |grad Phi + eps^gamma G(xi)| is fitted
    for its order (asserted >= gamma + delta_min), and each component of G above
    ``relevance`` times the panel maximum is compared with the eps -> 0
    extrapolation of grad Phi / eps^gamma. Every evaluation also checks the
    four-term decomposition identity of Phi.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .fields import fft_workers
    from .reduction import DEFAULT_BOX, constraint_gradient, ground_profile, reduced_phi

    box = box or DEFAULT_BOX
    prof = ground_profile(sc.p)
    eps = np.asarray(sorted(eps_sweep, reverse=True), dtype=float)
    panel = [np.asarray(x, dtype=float) for x in panel]
    fields = [leading_field(regime, order, xi, sc, prof) for xi in panel]
    gamma = fields[0][0]
    floor = floor if floor is not None else 1e3 * tol

    def job(args):
        e, xi = args
        g, st = constraint_gradient(e, xi, sc, box, tol=tol)
        rep, _ = reduced_phi(e, xi, sc, box, state=st)
        return g, rep, st

    jobs = [(e, xi) for xi in panel for e in eps]
    n_workers = workers or fft_workers()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            results = list(ex.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    peak = max(float(np.max(np.abs(G))) for _, G in fields)
    entries, rows, max_id = [], [], 0.0
    for k, (xi, (_, G)) in enumerate(zip(panel, fields)):
        res = results[k * len(eps):(k + 1) * len(eps)]
        grads = np.array([r[0] for r in res])
        for e, (g, rep, st) in zip(eps, res):
            max_id = max(max_id, rep.identity_error)
            rows.append({
                "eps": e, "xi": xi, "phi": rep.phi, "leading": rep.leading, "lambda": rep.lambda_term,
                "omega": rep.omega_term, "psi": rep.psi_term, "w_norm": st.w_norm, "grad": g,
                "resid": st.residual_dual_norm,
            })
        remainder = fit_series(eps, grads + eps[:, None] ** gamma * G[None, :], floor=floor)
        coeffs = {}
        for i in range(3):
            if abs(G[i]) > relevance * peak:
                c0, used = fit_leading_coefficient(eps, grads[:, i], gamma, floor=floor)
                coeffs[str(i)] = {"fitted": c0, "expected": float(-G[i]), "rel_error": abs(c0 + G[i]) / abs(G[i]), "points": used}
        entry = PanelEntry(xi, G, grads, remainder, coeffs)
        entry.passed = remainder.fitted_slope >= gamma + delta_min and all(
            c["rel_error"] <= coefficient_tolerance for c in coeffs.values()
        )
        entries.append(entry)
    return ExpansionReport(regime, gamma, eps, entries, gamma + delta_min, coefficient_tolerance, max_id, rows)


@dataclass
class LeadingOrderReport:
    """Energy and gradient expansion along xi = x1 / eps at a fixed physical point x1."""

    x1: NDArray
    energy_gap: AsymptoticSeries
    gradient_gap: AsymptoticSeries
    mu: float
    max_identity_error: float

    @property
    def passed(self) -> bool:
        return (
            self.energy_gap.fitted_slope >= 0.9
            and self.gradient_gap.fitted_slope >= 1.0 + self.mu - 0.2
            and self.max_identity_error <= 1e-10
        )

    def as_dict(self) -> dict:
        return {
            "x1": self.x1.tolist(), "mu": self.mu,
            "energy_gap": self.energy_gap.as_dict(), "gradient_gap": self.gradient_gap.as_dict(),
            "max_identity_error": self.max_identity_error, "pass": self.passed,
        }


def leading_order_study(sc: ScenarioPotentials, x1, eps_sweep, box=None, tol: float = 1e-12) -> LeadingOrderReport:
    """|Phi - C0 V^theta| and |grad Phi - eps a(eps xi) grad V(eps xi)| with a = theta C0 V^{theta - 1}."""
    from .reduction import DEFAULT_BOX, constraint_gradient, ground_constants, reduced_phi

    box = box or DEFAULT_BOX
    gc = ground_constants(sc.p)
    x1 = np.asarray(x1, dtype=float)
    eps = np.asarray(sorted(eps_sweep, reverse=True), dtype=float)
    e_gap, g_gap, max_id = [], [], 0.0
    for e in eps:
        xi = x1 / e
        g, st = constraint_gradient(e, xi, sc, box, tol=tol)
        rep, _ = reduced_phi(e, xi, sc, box, state=st)
        max_id = max(max_id, rep.identity_error)
        Vx = float(sc.V(x1))
        a = gc.theta * gc.C0 * Vx ** (gc.theta - 1.0)
        e_gap.append(abs(rep.phi - gc.C0 * Vx**gc.theta))
        g_gap.append(np.linalg.norm(g - e * a * sc.V.grad(x1)))
    mu = min(1.0, sc.p - 1.0)
    return LeadingOrderReport(x1, fit_series(eps, e_gap), fit_series(eps, g_gap), mu, max_id)
