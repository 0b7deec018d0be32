"""Exact reference solutions and spectral diagnostics.

Everything here uses the full matrix ``P`` and serves as ground truth for the
sample-based pipeline: the gauge-fixed bias ``v*``, the peripheral residual
``g* = r + P v* - v*``, the long-run gain profile, the spectral radius of the
projected operator on the anchored subspace, and a Lyapunov quadratic form
under which that operator contracts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import Mrp, Purpose, Sampler
from .gauge import EPISODE_CAP, EpisodeCapExceeded, GaugeMap
from .structure import ChainStructure


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ExactSolution:
    v_star: np.ndarray
    g_star: np.ndarray
    theta_star: np.ndarray
    gain: np.ndarray

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("v_star", "g_star", "theta_star", "gain")}


@dataclass(frozen=True, eq=False)
class QuotientDiagnostics:
    rho_q: float
    gamma: float
    seminorm_matrix: np.ndarray
    h_abs: float
    free_states: tuple
    lyapunov_residual: float = 0.0

    def seminorm(self, gauge: GaugeMap, v: np.ndarray) -> float:
        """Quotient seminorm: the Lyapunov form on the anchored representative."""
        x = gauge(np.asarray(v, dtype=np.float64))[list(self.free_states)]
        return float(np.sqrt(max(x @ self.seminorm_matrix @ x, 0.0)))

    def to_json(self) -> dict:
        return {
            "rho_q": self.rho_q,
            "gamma": self.gamma,
            "h_abs": self.h_abs,
            "free_states": list(self.free_states),
            "lyapunov_residual": self.lyapunov_residual,
            "seminorm_matrix": self.seminorm_matrix.tolist(),
        }


def stationary_distribution(P_block: np.ndarray) -> np.ndarray:
    """Unique stationary law of an irreducible (possibly periodic) block."""
    m = P_block.shape[0]
    A = (P_block - np.eye(m)).T
    A[-1] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def class_gains(mrp: Mrp, st: ChainStructure) -> np.ndarray:
    out = np.empty(st.m)
    for i, members in enumerate(st.classes):
        idx = list(members)
        out[i] = stationary_distribution(mrp.P[np.ix_(idx, idx)]) @ mrp.r[idx]
    return out


def exact_solve(mrp: Mrp, gauge: GaugeMap) -> ExactSolution:
    """Solve ``(I - Pi P) v = Pi r`` and derive ``g*``, its anchor coordinates, and the gain."""
    n = mrp.n
    if gauge.structure.n != n:
        raise ValueError("gauge and chain dimensions disagree")
    Pi = gauge.matrix()
    A = np.eye(n) - Pi @ mrp.P
    b = Pi @ mrp.r
    try:
        v = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("projected Poisson system is singular; gauge kernel is wrong") from exc
    g = mrp.r + mrp.P @ v - v
    st = gauge.structure
    theta = g[list(st.anchors)]
    gain = gauge.weights.class_absorption() @ class_gains(mrp, st)
    return ExactSolution(v, g, theta, gain)


def _restricted_operator(mrp: Mrp, gauge: GaugeMap) -> tuple[np.ndarray, list]:
    anchors = set(gauge.anchors)
    free = [s for s in range(mrp.n) if s not in anchors]
    PiP = gauge.matrix() @ mrp.P
    return PiP[np.ix_(free, free)], free


def spectral_radius(A: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000, krylov: int = 8, seed: int = 0) -> float:
    """Spectral radius by power iteration with Rayleigh-Ritz on a short Krylov block.

    Plain power ratios do not settle when the dominant eigenvalues form a
    complex pair or a rotation; extracting Ritz values from the span of a few
    consecutive power iterates does.
    """
    d = A.shape[0]
    if d == 0:
        return 0.0
    p = min(krylov, d)
    x = np.random.default_rng(seed).standard_normal(d)
    x /= np.linalg.norm(x)
    prev = np.inf
    est = 0.0
    for it in range(max_iter):
        # Arnoldi on the current iterate.
        V = np.zeros((d, p + 1))
        H = np.zeros((p + 1, p))
        V[:, 0] = x
        size = p
        for j in range(p):
            w = A @ V[:, j]
            for i in range(j + 1):
                H[i, j] = V[:, i] @ w
                w -= H[i, j] * V[:, i]
            h = np.linalg.norm(w)
            H[j + 1, j] = h
            if h < 1e-14 * max(1.0, np.abs(H[: j + 1, j]).max()):
                size = j + 1
                break
            V[:, j + 1] = w / h
        est = float(np.max(np.abs(np.linalg.eigvals(H[:size, :size]))))
        if size < p or abs(est - prev) <= tol * max(est, 1e-300) or est < 1e-300:
            return est
        prev = est
        y = A @ x
        ny = np.linalg.norm(y)
        if ny < 1e-300:
            return 0.0
        x = y / ny
    raise ConvergenceError(f"spectral radius did not converge in {max_iter} iterations (last estimate {est})")


def projected_spectral_radius(mrp: Mrp, gauge: GaugeMap, tol: float = 1e-8) -> float:
    """Spectral radius of ``Pi P`` on the anchored subspace, for exact or learned gauges."""
    A, _ = _restricted_operator(mrp, gauge)
    return spectral_radius(A, tol)


def lyapunov_series(B: np.ndarray, tol: float = 1e-12, max_terms: int = 100_000) -> np.ndarray:
    """``H = sum_t (B^T)^t B^t`` summed by doubling until the added block is below ``tol``.

    The doubling step ``H <- H + (B^{2^j})^T H B^{2^j}`` adds the next ``2^j``
    terms of the series at once.
    """
    d = B.shape[0]
    H = np.eye(d)
    Bk = B.copy()
    terms = 1
    while terms < max_terms:
        add = Bk.T @ H @ Bk
        H = H + add
        terms *= 2
        if np.abs(add).max() < tol:
            return H
        Bk = Bk @ Bk
    raise ConvergenceError(f"Lyapunov series did not converge within {max_terms} terms")


def absorption_times(mrp: Mrp, st: ChainStructure) -> np.ndarray:
    """Expected steps to reach the recurrent set from each transient state."""
    T = list(st.transient)
    if not T:
        return np.zeros(0)
    Q = mrp.P[np.ix_(T, T)]
    return np.linalg.solve(np.eye(len(T)) - Q, np.ones(len(T)))


def quotient_diagnostics(mrp: Mrp, gauge: GaugeMap, st: ChainStructure | None = None) -> QuotientDiagnostics:
    st = st or gauge.structure
    A, free = _restricted_operator(mrp, gauge)
    rho = spectral_radius(A)
    if rho >= 1:
        raise ConvergenceError(f"projected operator is not contractive on the anchored subspace (rho={rho})")
    gamma = (1.0 + rho) / 2.0
    if A.size:
        B = A / gamma
        H = lyapunov_series(B)
        resid = float(np.abs(H - B.T @ H @ B - np.eye(len(free))).max())
    else:
        H, resid = np.zeros((0, 0)), 0.0
    times = absorption_times(mrp, st)
    return QuotientDiagnostics(rho, gamma, H, float(times.max()) if times.size else 0.0, tuple(free), resid)


def return_identity_check(mrp: Mrp, v: np.ndarray, horizon: int, start: int) -> float:
    """``|sum_t (P^t r)(s) - [sum_t (P^t g_v)(s) + v(s) - (P^T v)(s)]|`` by exact matrix powers."""
    v = np.asarray(v, dtype=np.float64)
    P = mrp.P
    g_v = mrp.r + P @ v - v
    lhs = rhs = 0.0
    x_r, x_g, x_v = mrp.r.copy(), g_v, v.copy()
    for _ in range(horizon):
        lhs += x_r[start]
        rhs += x_g[start]
        x_r, x_g, x_v = P @ x_r, P @ x_g, P @ x_v
    rhs += v[start] - x_v[start]
    return abs(lhs - rhs)


@dataclass
class TransientCostRow:
    state: int
    estimate: float
    std_error: float
    exact: float
    flagged: bool


def transient_cost_check(
    mrp: Mrp, sol: ExactSolution, anchors, episodes: int, sampler: Sampler, states=None
) -> list[TransientCostRow]:
    """Monte-Carlo check that ``v*(s)`` is the expected ``r - g*`` accumulated until an anchor is hit.

    One row per non-anchor state (or per requested state); anchors are skipped
    because both sides are zero there.
    """
    anchor_set = set(int(a) for a in anchors)
    is_anchor = np.zeros(mrp.n, dtype=bool)
    is_anchor[list(anchor_set)] = True
    cost = mrp.r - sol.g_star
    todo = [s for s in (range(mrp.n) if states is None else states) if s not in anchor_set]
    rows = []
    for s in todo:
        rng = sampler.stream(Purpose.TRANSIENT_COST, state=s)
        pos = np.full(episodes, s, dtype=np.int64)
        total = np.zeros(episodes)
        active = np.arange(episodes)
        steps = 0
        while active.size:
            if steps >= EPISODE_CAP:
                raise EpisodeCapExceeded(f"anchor hitting from state {s} exceeded {EPISODE_CAP} steps")
            total[active] += cost[pos[active]]
            nxt = mrp.table.successors(pos[active], rng.random(active.size))
            pos[active] = nxt
            active = active[~is_anchor[nxt]]
            steps += 1
        est = float(total.mean())
        se = float(total.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else float("inf")
        exact = float(sol.v_star[s])
        rows.append(TransientCostRow(s, est, se, exact, abs(est - exact) > 3 * se))
    return rows
