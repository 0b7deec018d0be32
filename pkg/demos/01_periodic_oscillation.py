"""
Why ordinary relative values oscillate on a periodic chain
==========================================================

SWAP2 flips between two states forever and earns reward 1 on state 0.
Plain TD(0) with a single anchor never settles; the phase gauge
removes the oscillating mode and leaves nothing to learn.
"""

import numpy as np

from poisson_gauge import SaConfig, analyze_structure, exact_support_graph, exact_weights, build_gauge
from poisson_gauge import exact_solve, projected_sa, swap2, unprojected_td

mrp = swap2()
print("P =\n", mrp.P)
print("r =", mrp.r)

# Structure: one closed class of period two, one anchor per phase.
st = analyze_structure(exact_support_graph(mrp.P))
print("periods:", st.periods, "cyclic sets:", st.cyclic, "anchors:", st.anchors)

# Unanchored TD(0) keeps drifting with the phase.
_, trace = unprojected_td(mrp, SaConfig(iterations=2000, log_every=250), anchor=0)
for p in trace.points:
    print(f"  unprojected t={p.t:5d}  v={np.round(p.v, 3)}")

# With both phase anchors pinned the gauge kills every direction.
gauge = build_gauge(exact_weights(mrp.P, st))
print("gauge matrix:\n", gauge.matrix())
v, trace = projected_sa(mrp, gauge, SaConfig(iterations=2000, log_every=500), v0=np.array([3.0, 4.0]))
print("projected iterate:", v)

sol = exact_solve(mrp, gauge)
print("residual per anchor:", sol.theta_star, " gain:", sol.gain)
