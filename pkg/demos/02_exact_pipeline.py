"""
Exact pipeline on a reducible chain
===================================

ABS4 has two absorbing states (0 earns 1, 1 earns 0) and two transient
states that leak into them. Everything here is computed from P directly.
"""

import numpy as np

from poisson_gauge import abs4, build_gauge, cesaro_gain, exact_solve, exact_structure, exact_weights
from poisson_gauge import quotient_diagnostics

mrp = abs4()
st = exact_structure(mrp)
print("classes:", st.classes, "transient:", st.transient, "anchors:", st.anchors)

# Absorption weights: probability of ending in each anchor's phase.
w = exact_weights(mrp.P, st)
print("weights W =\n", w.w)
print("expected rows 2,3:", [10 / 13, 3 / 13], [7 / 13, 6 / 13])

gauge = build_gauge(w)
sol = exact_solve(mrp, gauge)
print("v* =", np.round(sol.v_star, 6), " (closed form:", np.round([0, 0, -270 / 169, -280 / 169], 6), ")")
print("gain =", np.round(sol.gain, 6))

# Cross-check against the long-run average computed by brute force.
print("Cesaro gain (1e5 steps):", np.round(cesaro_gain(mrp, 100_000), 6))

# The projected operator contracts: rho_q = sqrt(0.35).
d = quotient_diagnostics(mrp, gauge)
print(f"rho_q = {d.rho_q:.6f}  (sqrt(0.35) = {np.sqrt(0.35):.6f}), gamma = {d.gamma:.4f}, H_abs = {d.h_abs:.4f}")
