"""Command-line driver: ``sbp <command> --scenario <file> --out <dir>``.

Each command writes its artifacts and records named assertions in
``summary.json`` under the command's key. The exit status is 1 when an
assertion of the current command fails and 2 on usage or scenario errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import threading
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("sbp")

__all__ = ["main", "Summary"]


class UsageError(Exception):
    """The command does not apply to the given scenario (exit status 2)."""


class Summary:
    """Assertions for one command; all writes to a run directory go through :meth:`write`."""

    _lock = threading.Lock()

    def __init__(self, command: str, out: Path, scenario: str | None, seed: int):
        self.command, self.out, self.scenario, self.seed = command, out, scenario, seed
        self.assertions: list[dict] = []
        self.artifacts: list[str] = []

    def check(self, name: str, passed: bool, value=None, threshold=None) -> bool:
        self.assertions.append({"name": name, "pass": bool(passed), "value": _plain(value), "threshold": _plain(threshold)})
        log.info("%s %s (value %s, threshold %s)", "PASS" if passed else "FAIL", name, value, threshold)
        return bool(passed)

    @property
    def passed(self) -> bool:
        return all(a["pass"] for a in self.assertions)

    def write_json(self, name: str, data) -> None:
        self._write(name, json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header: list[str], rows) -> None:
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self._write(name, buf.getvalue())

    def _write(self, name: str, text: str) -> None:
        with self._lock:
            (self.out / name).write_text(text)
            self.artifacts.append(name)

    def write(self) -> None:
        path = self.out / "summary.json"
        with self._lock:
            data = json.loads(path.read_text()) if path.exists() else {}
            data[self.command] = {
                "scenario": self.scenario,
                "seed": self.seed,
                "pass": self.passed,
                "assertions": self.assertions,
                "artifacts": sorted(set(self.artifacts)),
            }
            path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


# --- commands -------------------------------------------------------------------------


def cmd_ground_state(args, summary: Summary) -> None:
    from .ground_state import constants, solve_ground_state, write_profile
    from .oracles import shooting_oracle_u0

    p = args.p if args.p is not None else (args.sc.p if args.sc else 3.0)
    prof = solve_ground_state(p)
    gc = constants(prof)
    write_profile(prof, summary.out / "profile.txt")
    summary.artifacts.append("profile.txt")
    summary.write_json("constants.json", {
        "p": p, "u0": prof.u0, "C0": gc.C0, "theta": gc.theta, "l2sq": gc.l2sq, "h1sq": gc.h1sq, "lp1": gc.lp1,
        "momentsA": gc.momentsA, "momentsB": gc.momentsB, "tail_truncation": gc.tail_truncation,
    })
    res = float(np.max(np.abs(prof.ode_residual())))
    summary.check("ode residual", res < 1e-8, res, 1e-8)
    neh = abs(gc.h1sq - gc.lp1) / gc.lp1
    summary.check("nehari identity", neh < 1e-6, neh, 1e-6)
    u0 = shooting_oracle_u0(p)
    summary.check("second-integrator U(0)", abs(u0 - prof.u0) < 1e-6, abs(u0 - prof.u0), 1e-6)
    summary.check("monotone decay", bool(np.all(np.diff(prof.u) < 0) and np.all(prof.u > 0)), None, None)


def cmd_kernel_check(args, summary: Summary) -> None:
    from .fields import Grid3, bp_multiplier, convolve_bp, convolve_coulomb, coulomb_multiplier, quad
    from .oracles import direct_convolution, gaussian_source, smooth_random_field

    rng = np.random.Generator(np.random.Philox(args.seed))
    g16 = Grid3((0.0, 0.0, 0.0), 4.0, 16)
    f = smooth_random_field(g16, rng)
    ref = direct_convolution(f, "bp", 1.0)
    err = float(np.max(np.abs(convolve_bp(f, 1.0).values - ref.values)) / np.max(np.abs(ref.values)))
    summary.check("bp convolution vs direct sum (16^3)", err < 1e-3, err, 1e-3)

    g = Grid3((0.0, 0.0, 0.0), 8.0, 64)
    src = gaussian_source(g, 0.25)
    bp = convolve_bp(src, 1.0)
    cl = convolve_coulomb(src)
    rows = []
    for r in (3.0, 5.0):
        k = g.n // 2 + int(round(r / g.h))
        kappa = -np.expm1(-r) / r
        e_bp = abs(bp.values[k, g.n // 2, g.n // 2] - kappa) / kappa
        e_cl = abs(cl.values[k, g.n // 2, g.n // 2] - 1.0 / r) * r
        summary.check(f"bp far field at |x| = {r:g}", e_bp < 1e-2, e_bp, 1e-2)
        rows.append([r, bp.values[k, g.n // 2, g.n // 2], kappa, cl.values[k, g.n // 2, g.n // 2], 1.0 / r])
        if r == 5.0:
            summary.check("coulomb far field at |x| = 5", e_cl < 1e-2, e_cl, 1e-2)
    summary.write_csv("kernel_far_field.csv", ["r", "bp", "kappa", "coulomb", "inverse_r"], rows)
    k2 = np.linspace(1e-3, 50.0, 2001)
    mono = bool(np.all(bp_multiplier(k2, 1.0) <= coulomb_multiplier(k2)))
    summary.check("bp multiplier below coulomb multiplier", mono, None, None)
    nonneg = src.values >= 0
    summary.check("coulomb dominates bp for non-negative source", bool(np.all(cl.values >= bp.values - 1e-14) and np.all(nonneg)), None, None)
    forms = []
    for _ in range(5):
        u = smooth_random_field(g16, rng)
        forms.append(min(quad(u * convolve_bp(u, 1.0)), quad(u * convolve_coulomb(u))))
    summary.check("convolution forms non-negative", min(forms) >= 0, min(forms), 0.0)


def _reduction_rows(rows):
    for r in rows:
        yield [r["eps"], *r["xi"], r["phi"], r["leading"], r["lambda"], r["omega"], r["psi"], r["w_norm"], *r["grad"], r["resid"]]


REDUCTION_HEADER = ["eps", "xi1", "xi2", "xi3", "phi", "leading", "lambda", "omega", "psi", "w_norm",
                    "grad_phi_1", "grad_phi_2", "grad_phi_3", "resid"]


def cmd_expansion_study(args, summary: Summary) -> None:
    from .asymptotics import expansion_study, leading_order_study

    sc = args.sc
    regime = sc.expansion_regime
    if regime is None:
        raise UsageError(f"scenario {sc.name!r} has no expansion regime")
    order = sc.n if regime == "degenerate-n" else sc.m if regime == "degenerate-m" else None
    rep = expansion_study(sc.potentials, regime, sc.eps_sweep, sc.panel, order=order, box=sc.box, tol=sc.tolerances["aux"])
    data = {"scenario": sc.name, "regime": regime, "gamma": rep.gamma, **rep.as_dict()}
    summary.write_csv("reduction.csv", REDUCTION_HEADER, _reduction_rows(rep.rows))
    series = []
    for k, e in enumerate(rep.panel):
        for eps, gr, rem in zip(rep.eps_values, e.grads, e.remainder.values):
            series.append([k, eps, *gr, *(-(eps**rep.gamma) * e.leading), float(np.linalg.norm(rem))])
    summary.write_csv("expansion.csv", ["panel", "eps", "grad_1", "grad_2", "grad_3", "lead_1", "lead_2", "lead_3", "remainder"], series)
    summary.check("decomposition identity", rep.max_identity_error <= 1e-10, rep.max_identity_error, 1e-10)
    summary.check(f"remainder order beyond eps^{rep.gamma}", rep.min_slope >= rep.slope_threshold, rep.min_slope, rep.slope_threshold)
    summary.check("leading coefficients", rep.max_coefficient_error <= rep.coefficient_tolerance,
                  rep.max_coefficient_error, rep.coefficient_tolerance)
    if sc.noncritical is not None:
        lo = leading_order_study(sc.potentials, sc.noncritical, sc.eps_sweep, box=sc.box, tol=sc.tolerances["aux"])
        data["leading_order"] = lo.as_dict()
        summary.check("energy gap order", lo.energy_gap.fitted_slope >= 0.9, lo.energy_gap.fitted_slope, 0.9)
        summary.check("gradient gap order", lo.gradient_gap.fitted_slope >= 1 + lo.mu - 0.2, lo.gradient_gap.fitted_slope, 1 + lo.mu - 0.2)
        summary.check("decomposition identity along x1 / eps", lo.max_identity_error <= 1e-10, lo.max_identity_error, 1e-10)
    summary.write_json("expansion.json", data)


def cmd_concentrate(args, summary: Summary) -> None:
    from .concentration import accumulation_test, concentration_study
    from .fields import write_snapshot

    sc = args.sc
    tol = sc.tolerances
    study = concentration_study(sc.potentials, sc.eps_sweep, box=sc.box, x0=sc.x0, tol=tol["full"], grad_tol=tol["grad"])
    data = {"scenario": sc.name, "regime": sc.regime, **study.as_dict()}
    summary.write_csv("concentration.csv", ["eps", "xi1", "xi2", "xi3", "dist", "w_norm", "resid"],
                      ([r.eps, *r.xi_star, r.distance_to_expected, r.w_norm_h1, r.full_residual_dual_norm] for r in study.records))
    summary.check("full residual of every solution", study.max_residual < tol["full"], study.max_residual, tol["full"])
    last = study.records[-1]
    summary.check("grad V small at the finest eps xi*", last.grad_v_norm < 1e-3, last.grad_v_norm, 1e-3)
    if study.distance is not None:
        summary.check("eps xi* decreasing", study.distance_decreasing, None, None)
        summary.check("eps xi* order", study.distance.fitted_slope >= 0.9, study.distance.fitted_slope, 0.9)
    else:
        dmax = max(r.distance_to_expected for r in study.records)
        summary.check("eps xi* at x0 (symmetric scenario)", dmax < 1e-8, dmax, 1e-8)
    if study.w_norm is not None:
        lo, hi = {"nondegenerate": (1.8, 2.2), "degenerate-m": (5.0, None)}.get(sc.regime, (1.8, None))
        s = study.w_norm.fitted_slope
        summary.check("w norm order", s >= lo and (hi is None or s <= hi), s, [lo, hi])
    else:
        wmax = max(r.w_norm_h1 for r in study.records)
        summary.check("w vanishes", wmax < 1e-8, wmax, 1e-8)
    if sc.noncritical is not None:
        acc = accumulation_test(sc.potentials, sc.noncritical, sc.eps_sweep[-3:], box=sc.box)
        data["noncritical_start"] = acc.as_dict()
        summary.check("no accumulation at a non-critical point", not acc.accumulates_at_x1, None, None)
    summary.write_json("concentration.json", data)
    from .reduction import solve_auxiliary

    st = solve_auxiliary(last.eps, last.xi_star, sc.potentials, sc.box, tol=tol["aux"])
    write_snapshot(st.u, summary.out / "u_finest.bin", label=f"{sc.name} eps={last.eps:g}")
    summary.artifacts.append("u_finest.bin")


def cmd_multiplicity_scan(args, summary: Summary) -> None:
    from .concentration import multiplicity_scan

    sc = args.sc
    if sc.ring is None:
        raise UsageError(f"scenario {sc.name!r} has no ring metadata")
    eps = min(sc.eps_sweep)
    rep = multiplicity_scan(eps, sc.potentials, float(sc.ring["r_in"]), float(sc.ring["r_out"]), box=sc.box,
                            tol=sc.tolerances["full"])
    summary.write_json("multiplicity.json", {"scenario": sc.name, **rep.as_dict()})
    summary.write_csv("multiplicity.csv", ["eps", "xi1", "xi2", "xi3", "resid", "index"],
                      ([r.eps, *r.xi_star, r.full_residual_dual_norm, r.index_sign] for r in rep.verified))
    summary.check("distinct verified critical points", rep.n_distinct >= 2, rep.n_distinct, 2)


def cmd_report(args, summary: Summary) -> None:
    out = summary.out
    agg = {}
    for path in sorted(out.glob("*.json")):
        if path.name == "report.json":
            continue
        agg[path.name] = json.loads(path.read_text())
    summ = agg.get("summary.json", {})
    overall = all(v.get("pass", False) for k, v in summ.items() if k != "report")
    agg["pass"] = overall
    summary.write_json("report.json", agg)
    summary.check("all recorded commands pass", overall, sorted(k for k, v in summ.items() if not v.get("pass", False)), None)


COMMANDS = {
    "ground-state": cmd_ground_state,
    "kernel-check": cmd_kernel_check,
    "expansion-study": cmd_expansion_study,
    "concentrate": cmd_concentrate,
    "multiplicity-scan": cmd_multiplicity_scan,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sbp", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--scenario", help="scenario JSON file or bundled scenario name")
    ap.add_argument("--out", default="sbp-out", help="output directory")
    ap.add_argument("--eps-sweep", help="comma-separated eps values")
    ap.add_argument("--grid-n", type=int, help="override nodes per axis")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--p", type=float, default=None, help="exponent for ground-state")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    from .scenario import ScenarioError, load, validate

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    args.sc = None
    if args.scenario:
        try:
            sc = load(args.scenario)
            sweep = [float(s) for s in args.eps_sweep.split(",")] if args.eps_sweep else None
            sc = sc.with_overrides(eps_sweep=sweep, grid_n=args.grid_n, seed=args.seed)
            rep = validate(sc, raise_on_failure=False)
        except (ScenarioError, OSError, ValueError) as exc:
            print(f"sbp: cannot use scenario {args.scenario!r}: {exc}", file=sys.stderr)
            return 2
        args.sc = sc
    elif args.command in ("expansion-study", "concentrate", "multiplicity-scan"):
        print(f"sbp: {args.command} needs --scenario", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else (args.sc.seed if args.sc else 0)
    args.seed = seed
    summary = Summary(args.command, out, args.sc.name if args.sc else None, seed)
    if args.sc is not None:
        (out / "scenario.json").write_text(json.dumps(args.sc.canonical(), indent=2, sort_keys=True) + "\n")
        summary.artifacts.append("scenario.json")
        for name, (ok, detail) in rep.checks.items():
            summary.check(f"scenario: {name}", ok, detail, None)
        if not rep.ok:
            summary.write()
            print(f"sbp: scenario {args.sc.name!r} fails validation: {'; '.join(rep.failures)}", file=sys.stderr)
            return 1
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command](args, summary)
    except UsageError as exc:
        print(f"sbp {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # rendered with scenario context, recorded as a failed assertion
        where = f" (scenario {args.sc.name!r})" if args.sc else ""
        summary.check(f"{args.command} completed", False, f"{type(exc).__name__}: {exc}", None)
        summary.write()
        print(f"sbp {args.command}{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    summary.write()
    for a in summary.assertions:
        print(f"{'PASS' if a['pass'] else 'FAIL'}  {a['name']}")
    return 0 if summary.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
