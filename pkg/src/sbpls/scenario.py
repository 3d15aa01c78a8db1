"""Scenario files: potentials, regime metadata, grid and sweep settings.

A scenario is a JSON document. ``canonical()`` gives the normalised form
that every write produces, so a written file re-parses to the same object.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .energy import ScenarioPotentials
from .potentials import PotentialSpec, vanishing_order
from .reduction import Box

__all__ = [
    "ScenarioFile",
    "ScenarioError",
    "ValidationReport",
    "DEFAULT_SWEEP",
    "REGIMES",
    "load",
    "loads",
    "dump",
    "validate",
    "bundled",
    "bundled_names",
]

DEFAULT_SWEEP = (0.4, 0.283, 0.2, 0.141, 0.1, 0.0707, 0.05)
REGIMES = ("flat", "nondegenerate", "degenerate-n", "degenerate-m", "mixed", "ring")


class ScenarioError(ValueError):
    """One or more hypotheses on the scenario potentials fail."""


@dataclass(frozen=True)
class ScenarioFile:
    name: str
    p: float
    V: PotentialSpec
    K: PotentialSpec
    regime: str
    n: int | None = None          # vanishing order of V at x0 (degenerate regimes)
    m: int | None = None          # vanishing order of K at x0
    x0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    grid_n: int = 64
    grid_L: float = 12.0
    eps_sweep: tuple[float, ...] = DEFAULT_SWEEP
    tolerances: dict = field(default_factory=lambda: {"aux": 1e-12, "grad": 1e-11, "full": 1e-6})
    panel: tuple[tuple[float, float, float], ...] = ()
    noncritical: tuple[float, float, float] | None = None
    ring: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ScenarioError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "eps_sweep", tuple(sorted((float(e) for e in self.eps_sweep), reverse=True)))
        object.__setattr__(self, "panel", tuple(tuple(float(v) for v in xi) for xi in self.panel))
        if self.noncritical is not None:
            object.__setattr__(self, "noncritical", tuple(float(v) for v in self.noncritical))

    @property
    def potentials(self) -> ScenarioPotentials:
        return ScenarioPotentials(self.V, self.K, self.p)

    @property
    def box(self) -> Box:
        return Box(self.grid_L, self.grid_n)

    @property
    def gamma(self) -> int | None:
        """Order of the leading reduced-gradient term in the degenerate regimes."""
        cand = []
        if self.n is not None:
            cand.append(self.n)
        if self.m is not None:
            cand.append(2 * self.m + 3)
        if self.regime == "nondegenerate":
            return 2
        return min(cand) if cand else None

    @property
    def expansion_regime(self) -> str | None:
        """Which closed-form field governs: nondegenerate, degenerate-n or degenerate-m."""
        if self.regime == "nondegenerate":
            return "nondegenerate"
        if self.regime in ("degenerate-n", "degenerate-m", "mixed"):
            if self.n is not None and (self.m is None or self.n < 2 * self.m + 3):
                return "degenerate-n"
            return "degenerate-m"
        return None

    def with_overrides(self, eps_sweep=None, grid_n=None, seed=None) -> "ScenarioFile":
        d = self.canonical()
        if eps_sweep is not None:
            d["eps_sweep"] = list(eps_sweep)
        if grid_n is not None:
            d["grid"]["n"] = int(grid_n)
        if seed is not None:
            d["seed"] = int(seed)
        return from_dict(d)

    def canonical(self) -> dict:
        return {
            "name": self.name,
            "p": self.p,
            "V": self.V.to_dict(),
            "K": self.K.to_dict(),
            "regime": self.regime,
            "n": self.n,
            "m": self.m,
            "x0": list(self.x0),
            "grid": {"n": self.grid_n, "L": self.grid_L},
            "eps_sweep": list(self.eps_sweep),
            "tolerances": dict(sorted(self.tolerances.items())),
            "panel": [list(x) for x in self.panel],
            "noncritical": list(self.noncritical) if self.noncritical is not None else None,
            "ring": dict(sorted(self.ring.items())) if self.ring else None,
            "seed": self.seed,
        }


def from_dict(d: dict) -> ScenarioFile:
    grid = d.get("grid", {})
    tol = {"aux": 1e-12, "grad": 1e-11, "full": 1e-6}
    tol.update(d.get("tolerances", {}))
    return ScenarioFile(
        name=str(d["name"]),
        p=float(d["p"]),
        V=PotentialSpec.from_dict(d["V"]),
        K=PotentialSpec.from_dict(d.get("K", {"c0": 0.0})),
        regime=str(d["regime"]),
        n=d.get("n"),
        m=d.get("m"),
        x0=tuple(d.get("x0", (0.0, 0.0, 0.0))),
        grid_n=int(grid.get("n", 64)),
        grid_L=float(grid.get("L", 12.0)),
        eps_sweep=tuple(d.get("eps_sweep", DEFAULT_SWEEP)),
        tolerances=tol,
        panel=tuple(tuple(x) for x in d.get("panel", ())),
        noncritical=tuple(d["noncritical"]) if d.get("noncritical") is not None else None,
        ring=d.get("ring"),
        seed=int(d.get("seed", 0)),
    )


def loads(text: str) -> ScenarioFile:
    try:
        return from_dict(json.loads(text))
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def load(path) -> ScenarioFile:
    """Read a scenario from a path, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_names():
        return bundled(str(path))
    return loads(p.read_text())


def dump(sc: ScenarioFile, path=None) -> str:
    text = json.dumps(sc.canonical(), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def bundled_names() -> list[str]:
    root = resources.files("sbpls") / "scenarios"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json"))


def bundled(name: str) -> ScenarioFile:
    return loads((resources.files("sbpls") / "scenarios" / f"{name}.json").read_text())


# --- validation ------------------------------------------------------------------------


@dataclass
class ValidationReport:
    checks: dict[str, tuple[bool, str]]

    @property
    def ok(self) -> bool:
        return all(v[0] for v in self.checks.values())

    @property
    def failures(self) -> list[str]:
        return [f"{k}: {v[1]}" for k, v in self.checks.items() if not v[0]]

    def as_dict(self) -> dict:
        return {k: {"pass": v[0], "detail": v[1]} for k, v in self.checks.items()}


def _order_check(spec: PotentialSpec, x0, order: int, start: int, even_min: int) -> tuple[bool, str]:
    found = vanishing_order(spec, x0, start=start, max_order=order)
    if found != order:
        return False, f"first non-zero derivative at order {found}, declared {order}"
    if order < even_min or order % 2:
        return False, f"order {order} must be even and at least {even_min}"
    tensor = spec.derivative_tensor(x0, order)
    mixed = [a for a, v in tensor.items() if max(a) < order and abs(v) > 1e-12]
    if mixed:
        return False, f"mixed derivatives of order {order} do not vanish: {mixed}"
    pure = [tensor[tuple(order if d == i else 0 for d in range(3))] for i in range(3)]
    if not any(abs(v) > 1e-12 for v in pure):
        return False, "all pure derivatives of the declared order vanish"
    return True, f"order {order}, pure derivatives {np.round(pure, 12).tolist()}"


def validate(sc: ScenarioFile, raise_on_failure: bool = True, half_width: float = 12.0) -> ValidationReport:
    """Check the standing hypotheses on V and K and the declared regime metadata."""
    checks: dict[str, tuple[bool, str]] = {}
    x0 = np.asarray(sc.x0)
    checks["exponent in (1, 5)"] = (1.0 < sc.p < 5.0, f"p = {sc.p}")
    checks["V bounded in C^2"] = (sc.V.bounded, "every bump is Gaussian-windowed" if sc.V.bounded else "unbounded monomial term")
    vmin, _ = sc.V.sample_extrema(half_width)
    checks["inf V > 0"] = (vmin > 0, f"sampled minimum {vmin:.6g}")
    checks["K continuous and bounded"] = (sc.K.bounded, "bounded" if sc.K.bounded else "unbounded monomial term")
    if sc.regime != "ring" and sc.regime != "flat":
        checks["normalisation V(x0) = 1, x0 = 0"] = (
            bool(np.all(x0 == 0) and abs(float(sc.V(x0)) - 1.0) < 1e-12),
            f"x0 = {x0.tolist()}, V(x0) = {float(sc.V(x0)):.15g}",
        )
    if sc.regime == "flat":
        checks["flat potentials"] = (sc.V.is_constant and sc.K.is_zero, "V constant and K = 0")
    if sc.regime == "nondegenerate":
        g = sc.V.grad(x0)
        H = sc.V.hessian(x0)
        checks["grad V(x0) = 0"] = (float(np.linalg.norm(g)) < 1e-12, f"|grad V| = {np.linalg.norm(g):.2e}")
        smin = float(np.min(np.abs(np.linalg.eigvalsh(H))))
        checks["Hess V(x0) non-singular"] = (smin > 1e-8, f"smallest |eigenvalue| {smin:.3g}")
    if sc.n is not None:
        checks["vanishing order of V"] = _order_check(sc.V, x0, sc.n, 1, 4)
    if sc.m is not None:
        checks["vanishing order of K"] = _order_check(sc.K, x0, sc.m, 0, 2)
    if sc.regime in ("degenerate-n", "mixed") and sc.n is None:
        checks["declared n"] = (False, "regime needs the vanishing order n of V")
    if sc.regime in ("degenerate-m", "mixed") and sc.m is None:
        checks["declared m"] = (False, "regime needs the vanishing order m of K")
    if sc.n is not None and sc.m is not None:
        checks["n differs from 2m + 3"] = (sc.n != 2 * sc.m + 3, f"n = {sc.n}, 2m + 3 = {2 * sc.m + 3}")
    if sc.regime == "degenerate-m" and sc.n is None:
        checks["V constant"] = (sc.V.is_constant, "degenerate-K studies take V = V(x0)")
    if sc.regime == "ring":
        ok = bool(sc.ring and {"radius", "r_in", "r_out"} <= set(sc.ring))
        checks["ring metadata"] = (ok, "needs radius, r_in, r_out")
        if ok:
            R = float(sc.ring["radius"])
            th = np.linspace(0, 2 * math.pi, 64, endpoint=False)
            pts = np.column_stack([R * np.cos(th), R * np.sin(th), np.zeros_like(th)])
            vals = sc.V(pts)
            grads = np.linalg.norm(sc.V.grad(pts), axis=1)
            checks["V constant on the circle"] = (float(np.ptp(vals)) < 1e-12, f"spread {np.ptp(vals):.2e}")
            checks["grad V = 0 on the circle"] = (float(grads.max()) < 1e-10, f"max |grad V| {grads.max():.2e}")
    rep = ValidationReport(checks)
    if raise_on_failure and not rep.ok:
        raise ScenarioError(f"scenario {sc.name!r} fails: " + "; ".join(rep.failures))
    return rep
