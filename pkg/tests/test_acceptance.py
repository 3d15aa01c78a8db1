"""Acceptance gate: one test and one PASS/FAIL line per criterion.

The expensive studies are module fixtures, so the identity criterion reuses
every evaluation made by the others. Run with ``pytest tests/test_acceptance.py -s``
to see the lines as they happen; they are also repeated in the terminal summary.
"""

import time

import numpy as np
import pytest

from sbpls.asymptotics import (
    ctilde,
    ctilde_monte_carlo,
    expansion_study,
    fit_series,
    g_jacobian,
    gamma1,
    gamma1_closed_form,
    leading_order_study,
)
from sbpls.concentration import accumulation_test, concentration_study, multiplicity_scan
from sbpls.energy import ScenarioPotentials, calculus_check, energy_nls, energy_sbp
from sbpls.fields import Grid3, convolve_bp, sample
from sbpls.ground_state import constants, solve_ground_state
from sbpls.oracles import direct_convolution, gaussian_source, shooting_oracle_u0, smooth_random_field
from sbpls.reduction import ground_profile, reduced_phi
from sbpls.scenario import bundled

from conftest import ACCEPTANCE_LINES, ZERO

pytestmark = pytest.mark.slow


def record(k: int, title: str, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'}  criterion {k:2d}  {title}: {detail}"
    print("\n" + line)
    ACCEPTANCE_LINES.append((k, line))
    return passed


class Failed:
    """Stand-in for a study that raised, so the criterion can report it."""

    def __init__(self, exc):
        self.exc = exc

    def __str__(self):
        return f"{type(self.exc).__name__}: {self.exc}"


def guarded(fn):
    try:
        return fn()
    except Exception as exc:  # reported as a FAIL line by the consuming test
        return Failed(exc)


def fail_if_broken(k, title, *studies):
    for s in studies:
        if isinstance(s, Failed):
            record(k, title, False, str(s))
            pytest.fail(str(s))


# --- studies ------------------------------------------------------------------------------

NONDEG = bundled("nondegenerate")
XI_PANEL = np.array(NONDEG.panel[0])


@pytest.fixture(scope="module")
def flat_states():
    sc = bundled("flat")

    def run():
        pts = [(0.2, (0.5, -0.3, 0.2)), (0.05, (3.0, 1.0, -2.0))]
        return [reduced_phi(e, xi, sc.potentials, sc.box, tol=sc.tolerances["aux"]) for e, xi in pts]

    return guarded(run)


@pytest.fixture(scope="module")
def w_sweep():
    def run():
        t0 = time.perf_counter()
        out = [reduced_phi(e, XI_PANEL, NONDEG.potentials, NONDEG.box, tol=NONDEG.tolerances["aux"]) for e in NONDEG.eps_sweep]
        return out, time.perf_counter() - t0

    return guarded(run)


@pytest.fixture(scope="module")
def leading_order():
    return guarded(lambda: leading_order_study(NONDEG.potentials, NONDEG.noncritical, NONDEG.eps_sweep, NONDEG.box,
                                               tol=NONDEG.tolerances["aux"]))


def _expansion(name):
    sc = bundled(name)
    order = sc.n if sc.expansion_regime == "degenerate-n" else sc.m if sc.expansion_regime == "degenerate-m" else None
    return guarded(lambda: expansion_study(sc.potentials, sc.expansion_regime, sc.eps_sweep, sc.panel, order=order,
                                           box=sc.box, tol=sc.tolerances["aux"]))


@pytest.fixture(scope="module")
def expansions():
    return {name: _expansion(name) for name in ("nondegenerate", "quartic", "kbump")}


@pytest.fixture(scope="module")
def concentration():
    tol = NONDEG.tolerances

    def run():
        study = concentration_study(NONDEG.potentials, NONDEG.eps_sweep, NONDEG.box, x0=NONDEG.x0,
                                    tol=tol["full"], grad_tol=tol["grad"])
        acc = accumulation_test(NONDEG.potentials, NONDEG.noncritical, NONDEG.eps_sweep[-3:], NONDEG.box)
        return study, acc

    return guarded(run)


@pytest.fixture(scope="module")
def ring():
    sc = bundled("ring")
    return guarded(lambda: multiplicity_scan(min(sc.eps_sweep), sc.potentials, sc.ring["r_in"], sc.ring["r_out"],
                                             box=sc.box, tol=sc.tolerances["full"]))


# --- criteria -------------------------------------------------------------------------------


def test_criterion_01_ground_state():
    t0 = time.perf_counter()
    worst = {"residual": 0.0, "nehari": 0.0, "u0": 0.0}
    for p in (2.0, 3.0, 4.0):
        prof = solve_ground_state(p)
        gc = constants(prof)
        worst["residual"] = max(worst["residual"], prof.ode_residual())
        worst["nehari"] = max(worst["nehari"], abs(gc.h1sq - gc.lp1) / gc.lp1)
        worst["u0"] = max(worst["u0"], abs(shooting_oracle_u0(p) - prof.u0))
    dt = time.perf_counter() - t0
    ok = worst["residual"] < 1e-8 and worst["nehari"] < 1e-6 and worst["u0"] < 1e-6 and dt < 5.0
    detail = (f"ODE residual {worst['residual']:.2e} (< 1e-8), Nehari {worst['nehari']:.2e} (< 1e-6), "
              f"U(0) gap {worst['u0']:.2e} (< 1e-6), {dt:.2f} s (< 5 s) for p = 2, 3, 4")
    assert record(1, "ground state", ok, detail)


def test_criterion_02_kernel():
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(2))
    g16 = Grid3((0.0, 0.0, 0.0), 4.0, 16)
    err16 = 0.0
    for eps in (1.0, 0.2):
        f = smooth_random_field(g16, rng)
        ref = direct_convolution(f, "bp", eps).values
        err16 = max(err16, float(np.max(np.abs(convolve_bp(f, eps).values - ref)) / np.max(np.abs(ref))))
    g = Grid3((0.0, 0.0, 0.0), 8.0, 64)
    phi = convolve_bp(gaussian_source(g, 0.25), 1.0).values
    c = g.n // 2
    far = 0.0
    for r in (3.0, 5.0):
        kappa = -np.expm1(-r) / r
        far = max(far, abs(phi[c + int(round(r / g.h)), c, c] - kappa) / kappa)
    dt = time.perf_counter() - t0
    ok = err16 < 1e-3 and far < 1e-2 and dt < 30.0
    detail = f"16^3 direct-sum error {err16:.2e} (< 1e-3), far field at |x| = 3, 5 off by {far:.2e} (< 1e-2), {dt:.2f} s (< 30 s)"
    assert record(2, "kernel correctness", ok, detail)


def test_criterion_03_calculus(bump_V, bump_K):
    grid = Grid3((0.0, 0.0, 0.0), 8.0, 32)
    rng = np.random.Generator(np.random.Philox(3))
    orders, sym = [], 0.0
    for p in (2.0, 3.0):
        sc = ScenarioPotentials(bump_V, bump_K, p)
        u = sample(ground_profile(p), (0.3, -0.2, 0.1), grid)
        for eps in (0.5, 0.2):
            w, w2 = 0.1 * smooth_random_field(grid, rng), 0.1 * smooth_random_field(grid, rng)
            chk = calculus_check(eps, u, w, w2, sc)
            orders += [chk.grad_order, chk.hess_order]
            sym = max(sym, chk.symmetry)
    sc0 = ScenarioPotentials(bump_V, ZERO, 2.0)
    u = sample(ground_profile(2.0), (0.0, 0.0, 0.0), grid) + 0.1 * smooth_random_field(grid, rng)
    same = all(energy_sbp(e, u, sc0) == energy_nls(e, u, sc0) for e in (0.5, 0.1))
    ok = min(orders) >= 1.9 and sym < 1e-10 and same
    detail = f"min FD order {min(orders):.3f} (>= 1.9), Hessian asymmetry {sym:.1e} (< 1e-10), E = I at K = 0: {same}"
    assert record(3, "calculus correctness", ok, detail)


def test_criterion_04_reduction(flat_states, w_sweep):
    fail_if_broken(4, "reduction", flat_states, w_sweep)
    flat = max(max(float(np.max(np.abs(st.w.values))), float(np.max(np.abs(st.alpha)))) for _, st in flat_states)
    reps, dt = w_sweep
    ws = [st.w_norm for _, st in reps]
    slope = fit_series(NONDEG.eps_sweep, ws).fitted_slope
    ok = flat < 1e-8 and 1.8 <= slope <= 2.2 and dt < 600
    detail = (f"flat |w|, |alpha| <= {flat:.1e} (< 1e-8); nondegenerate |w| slope {slope:.3f} in [1.8, 2.2] over "
              f"{len(ws)} eps at xi = {XI_PANEL.tolist()}; sweep {dt:.0f} s (< 600 s)")
    assert record(4, "reduction", ok, detail)


def test_criterion_06_expansion_orders(leading_order):
    fail_if_broken(6, "expansion orders", leading_order)
    lo = leading_order
    se, sg, need = lo.energy_gap.fitted_slope, lo.gradient_gap.fitted_slope, 1.0 + lo.mu - 0.2
    ok = se >= 0.9 and sg >= need
    detail = f"|Phi - C0 V^theta| slope {se:.3f} (>= 0.9), |grad Phi - eps a grad V| slope {sg:.3f} (>= {need:.1f}) at x1 = {np.asarray(lo.x1).tolist()}"
    assert record(6, "expansion orders", ok, detail)


def test_criterion_07_leading_fields(expansions, prof2):
    fail_if_broken(7, "leading vector fields", *expansions.values())
    sc = NONDEG.potentials
    gc = constants(prof2)
    by_parts = max(
        float(np.max(np.abs(gamma1(xi, sc, gc) - gamma1_closed_form(xi, sc, gc))) / np.max(np.abs(gamma1_closed_form(xi, sc, gc))))
        for xi in NONDEG.panel
    )
    nd, q, k = expansions["nondegenerate"], expansions["quartic"], expansions["kbump"]
    ok = (by_parts < 1e-10 and nd.min_slope >= 2.2
          and q.max_coefficient_error <= 0.1 and k.max_coefficient_error <= 0.1)
    detail = (f"G1 by parts {by_parts:.1e} (< 1e-10); remainder slope {nd.min_slope:.3f} (>= 2.2); "
              f"eps^4 f coefficients within {q.max_coefficient_error:.1%}, eps^7 g within {k.max_coefficient_error:.1%} (<= 10%); "
              f"degenerate remainder slopes {q.min_slope:.2f} (n = 4), {k.min_slope:.2f} (m = 2)")
    assert record(7, "leading vector fields", ok, detail)


def test_criterion_08_ctilde(prof2):
    ct = ctilde(2, 1.0, prof2)
    est, err = ctilde_monte_carlo(2, 1.0, prof2, n_samples=1_000_000, seed=8)
    T = ct.tensor
    nz = np.abs(T) > 1e-12 * np.max(np.abs(T))
    rel = float(np.max(np.abs(est[nz] - T[nz]) / np.abs(T[nz])))
    # parity: x_j^a U^2 is odd for odd a; y_l^b U d_iU needs i = l and b odd
    a, b, i, j, l = np.indices(T.shape)
    parity_zero = (a % 2 == 1) | (b % 2 == 0) | (i != l)
    zeros_exact = bool(np.all(T[parity_zero] == 0)) and not np.any(nz & parity_zero)
    d = 0.1
    s = np.linalg.svd(g_jacobian(np.zeros(3), 2, [1.0, d, d], ct), compute_uv=False)
    ok = rel < 0.02 and zeros_exact and s.min() > 0
    detail = (f"Monte-Carlo gap {rel:.2%} on {int(nz.sum())} entries (< 2%), parity zeros exact: {zeros_exact}, "
              f"D0 g singular values {np.array2string(s, precision=4)} for (1, 0.1, 0.1)")
    assert record(8, "coupling tensor", ok, detail)


def test_criterion_09_concentration(concentration):
    fail_if_broken(9, "concentration", concentration)
    study, acc = concentration
    slope = study.distance.fitted_slope if study.distance else float("nan")
    ok = study.distance_decreasing and slope >= 0.9 and study.max_residual < 1e-6 and not acc.accumulates_at_x1
    failures = sum(not o["converged"] for o in acc.outcomes)
    detail = (f"|eps xi* - x0| decreasing: {study.distance_decreasing}, slope {slope:.3f} (>= 0.9); "
              f"max full residual {study.max_residual:.1e} (< 1e-6); start at x1 = {np.asarray(acc.x1).tolist()}: "
              f"{failures}/{len(acc.outcomes)} searches leave the ball, accumulates: {acc.accumulates_at_x1}")
    assert record(9, "concentration", ok, detail)


def test_criterion_10_multiplicity(ring):
    fail_if_broken(10, "multiplicity scan", ring)
    pts = [np.round(r.eps * r.xi_star, 4).tolist() for r in ring.verified]
    ok = ring.n_distinct >= 2
    detail = f"{ring.n_distinct} distinct verified critical points (>= 2) at eps = {ring.eps}: {pts}"
    assert record(10, "multiplicity scan", ok, detail)


def test_criterion_05_decomposition_identity(flat_states, w_sweep, leading_order, expansions, concentration, ring):
    studies = [flat_states, w_sweep, leading_order, *expansions.values(), concentration, ring]
    fail_if_broken(5, "decomposition identity", *studies)
    errs = [rep.identity_error for rep, _ in flat_states]
    errs += [rep.identity_error for rep, _ in w_sweep[0]]
    errs.append(leading_order.max_identity_error)
    errs += [e.max_identity_error for e in expansions.values()]
    errs += [r.identity_error for r in concentration[0].records]
    errs += [r.identity_error for r in ring.verified]
    n_eval = (len(flat_states) + len(w_sweep[0]) + len(NONDEG.eps_sweep)
              + sum(len(e.rows) for e in expansions.values()) + len(concentration[0].records) + len(ring.verified))
    worst = max(errs)
    assert record(5, "decomposition identity", worst <= 1e-10,
                  f"max relative error {worst:.1e} over {n_eval} evaluations (<= 1e-10)")
