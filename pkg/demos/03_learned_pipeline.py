"""
Learning everything from samples
================================

Same chain as before, but the solver only gets a sampler: the support
graph, the absorption weights and the value function are all estimated.
"""

import numpy as np

from poisson_gauge import SaConfig, Sampler, abs4, analyze_structure, build_gauge, estimate_residual
from poisson_gauge import estimate_weights, exact_solve, exact_structure, exact_weights, gain_profile
from poisson_gauge import gauge_deviation, learn_support_graph, projected_sa, required_k, required_m

mrp = abs4()
sampler = Sampler(7)

K = required_k(0.3, mrp.n, 0.05)
graph = learn_support_graph(mrp, K, sampler)
st = analyze_structure(graph)
print(f"K = {K}, recovered structure matches exact:", st == exact_structure(mrp))

M = required_m(0.05, len(st.transient), st.N, 0.05)
w_hat = estimate_weights(mrp, st, M, sampler)
g_hat = build_gauge(w_hat)
g_true = build_gauge(exact_weights(mrp.P, st))
print(f"M = {M}, gauge deviation = {gauge_deviation(g_hat, g_true):.4f}")

v_star = exact_solve(mrp, g_true).v_star
v, trace = projected_sa(mrp, g_hat, SaConfig(iterations=20_000, log_every=2000, seed=7))
for p in trace.points:
    print(f"  t={p.t:6d}  err={np.abs(p.v - v_star).max():.4f}")

res = estimate_residual(mrp, v, g_hat, 220, sampler)
print("estimated gain:", np.round(gain_profile(res, w_hat, st), 4))
print("true gain:     ", np.round(exact_solve(mrp, g_true).gain, 4))
