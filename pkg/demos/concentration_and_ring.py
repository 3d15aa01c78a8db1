"""Critical points of the reduced energy and the solutions they give.

First a Newton search on the reduced gradient locates xi* for the
nondegenerate scenario, so that eps xi* sits near the minimum of V, and the
assembled u = z + w is checked as a critical point of the full energy.
With --ring the demo also runs the multiplicity scan on the ring scenario
(about four minutes), which should find four distinct solutions.

    python3 demos/concentration_and_ring.py [--ring]
"""

import argparse

import numpy as np

from sbpls.concentration import find_critical_xi, full_solution, multiplicity_scan
from sbpls.scenario import bundled

ap = argparse.ArgumentParser()
ap.add_argument("--ring", action="store_true")
args = ap.parse_args()

sc = bundled("nondegenerate")
pots, box = sc.potentials, sc.box
print("eps     xi*                                 |eps xi*|   full residual")
for eps in (0.2, 0.1):
    search = find_critical_xi(eps, pots, np.zeros(3), radius=3.0, box=box)
    rec = full_solution(eps, search.xi_star, pots, box, state=search.state, search=search)
    print(f"{eps:<7g} {np.array2string(rec.xi_star, precision=5):<35} {rec.distance_to_expected:<11.3e} {rec.full_residual_dual_norm:.1e}")

if args.ring:
    ring = bundled("ring")
    eps = min(ring.eps_sweep)
    rep = multiplicity_scan(eps, ring.potentials, float(ring.ring["r_in"]), float(ring.ring["r_out"]), box=ring.box)
    print(f"\nring at eps = {eps:g}: {rep.n_distinct} distinct verified critical points")
    for r in rep.verified:
        print(f"  eps xi* = {np.array2string(r.eps * r.xi_star, precision=4)}  index sign {r.index_sign:+d}")
