"""Radial ground states and the two convolution kernels.

Solves U'' + (2/r) U' - U + U^p = 0 for a few exponents, prints the energy
constants the reduction uses, then pushes a narrow Gaussian through the
Bopp-Podolsky and Coulomb convolutions and compares with closed forms.

    python3 demos/ground_state_and_kernels.py
"""

import numpy as np

from sbpls.fields import Grid3, convolve_bp, convolve_coulomb
from sbpls.ground_state import constants, solve_ground_state
from sbpls.oracles import bp_of_gaussian, coulomb_of_gaussian, gaussian_source

print("p    U(0)        C0          theta   max ODE residual")
for p in (2.0, 3.0, 4.0):
    prof = solve_ground_state(p)
    gc = constants(prof)
    res = np.max(np.abs(prof.ode_residual()))
    print(f"{p:<4g} {prof.u0:<11.8f} {gc.C0:<11.6f} {gc.theta:<7.4f} {res:.1e}")

# A Gaussian of width 0.5 on a 64^3 box: both potentials are known exactly.
g = Grid3((0.0, 0.0, 0.0), 8.0, 64)
s = 0.5
src = gaussian_source(g, s)
for eps in (1.0, 0.3):
    bp = convolve_bp(src, eps)
    line = bp.values[g.n // 2:, g.n // 2, g.n // 2]
    r = g.axis[g.n // 2:]
    ref = bp_of_gaussian(r, s, eps)
    print(f"eps = {eps}: max |BP - closed form| on the x axis = {np.max(np.abs(line - ref)):.2e}")

# The singular Coulomb kernel is only resolved to the cell size near the origin.
cl = convolve_coulomb(src).values[g.n // 2:, g.n // 2, g.n // 2]
r = g.axis[g.n // 2:]
far = r >= 1.0
err = np.max(np.abs(cl - coulomb_of_gaussian(r, s))[far])
print(f"Coulomb: max |phi - erf(r/(s sqrt 2))/r| for r >= 1 = {err:.2e}")

# eps * kappa(eps r) <= 1/r, so the BP field never exceeds the Coulomb field for eps <= 1.
bp1 = convolve_bp(src, 1.0).values
print("BP <= Coulomb everywhere:", bool(np.all(bp1 <= convolve_coulomb(src).values + 1e-12)))
