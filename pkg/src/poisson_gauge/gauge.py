"""Phase-offset absorption weights and the anchor gauge map.

Column ``(i, k)`` of a weight matrix holds the probability that a trajectory
from each state enters recurrent class ``i`` at relative phase ``k``; the
columns span the peripheral subspace of ``P``. The gauge map built from them

    (Pi v)(s) = v(s) - sum_{(i,k)} v(a_{i,k}) w[s, (i,k)]

is a projection whose kernel is that subspace and whose range is the set of
vectors vanishing at every anchor.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .chain import Mrp, Purpose, Sampler
from .structure import ChainStructure, budget_ceil

EPISODE_CAP = 1_000_000


class EpisodeCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PhaseWeights:
    structure: ChainStructure
    w: np.ndarray
    kind: str = "exact"
    M: int | None = None
    seed: int | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.shape != (self.structure.n, self.structure.N):
            raise ValueError(f"weights have shape {w.shape}, expected {(self.structure.n, self.structure.N)}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def class_absorption(self) -> np.ndarray:
        """``n x m`` matrix of class absorption probabilities (phases summed)."""
        st = self.structure
        return np.stack(
            [self.w[:, st.column(i, 0): st.column(i, 0) + d].sum(axis=1) for i, d in enumerate(st.periods)],
            axis=1,
        )

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "M": self.M,
            "seed": self.seed,
            "structure": self.structure.to_json(),
            "index_set": [list(ik) for ik in self.structure.index_set],
            "w": self.w.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PhaseWeights":
        return cls(ChainStructure.from_json(obj["structure"]), obj["w"], obj.get("kind", "exact"),
                   obj.get("M"), obj.get("seed"))


@dataclass(frozen=True, eq=False)
class GaugeMap:
    weights: PhaseWeights

    @property
    def anchors(self) -> tuple:
        return self.weights.structure.anchors

    @property
    def structure(self) -> ChainStructure:
        return self.weights.structure

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return apply_gauge(self, v)

    def matrix(self) -> np.ndarray:
        """Dense ``n x n`` matrix of the map."""
        n = self.structure.n
        E = np.zeros((self.structure.N, n))
        E[np.arange(self.structure.N), list(self.anchors)] = 1.0
        return np.eye(n) - self.weights.w @ E

    def to_json(self) -> dict:
        return {"anchors": list(self.anchors), "weights": self.weights.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "GaugeMap":
        g = cls(PhaseWeights.from_json(obj["weights"]))
        if "anchors" in obj and list(obj["anchors"]) != list(g.anchors):
            raise ValueError("gauge anchors disagree with its weight structure")
        return g


def build_gauge(weights: PhaseWeights) -> GaugeMap:
    return GaugeMap(weights)


def apply_gauge(g: GaugeMap, v: np.ndarray) -> np.ndarray:
    """Subtract the anchor-weighted peripheral component; works column-wise on 2-D input."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != g.structure.n:
        raise ValueError(f"vector has length {v.shape[0]}, gauge expects {g.structure.n}")
    anchors = list(g.anchors)
    return v - g.weights.w @ v[anchors]


def _phase_indicators(st: ChainStructure) -> np.ndarray:
    w = np.zeros((st.n, st.N))
    for col, (i, k) in enumerate(st.index_set):
        w[list(st.cyclic[i][k]), col] = 1.0
    return w


def exact_weights(P: np.ndarray, st: ChainStructure) -> PhaseWeights:
    """Solve the shift recursion ``b_k = P b_{k+1}`` on transient states per class.

    For class ``i`` with period ``d`` the unknowns ``x_k = b_{i,k}|_T`` satisfy
    ``x_k - Q x_{k+1 mod d} = P[T, C_{i,k+1}] 1``, a ``|T| d`` square system
    that is non-singular because ``Q`` is strictly substochastic in spectrum.
    """
    P = np.asarray(P, dtype=np.float64)
    w = _phase_indicators(st)
    T = list(st.transient)
    if T:
        nt = len(T)
        Q = P[np.ix_(T, T)]
        for i, d in enumerate(st.periods):
            A = np.eye(nt * d)
            rhs = np.empty(nt * d)
            for k in range(d):
                nxt = (k + 1) % d
                A[k * nt:(k + 1) * nt, nxt * nt:(nxt + 1) * nt] -= Q
                rhs[k * nt:(k + 1) * nt] = P[np.ix_(T, list(st.cyclic[i][nxt]))].sum(axis=1)
            try:
                x = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(
                    f"absorption system for class {i} is singular; structure is misclassified"
                ) from exc
            for k in range(d):
                w[T, st.column(i, k)] = x[k * nt:(k + 1) * nt]
    return PhaseWeights(st, w, "exact")


def _absorb_episodes(mrp: Mrp, st: ChainStructure, s: int, M: int, rng: np.random.Generator) -> np.ndarray:
    table = mrp.table
    rec = st.recurrent_mask
    pos = np.full(M, s, dtype=np.int64)
    tau = np.zeros(M, dtype=np.int64)
    active = np.arange(M)
    steps = 0
    while active.size:
        if steps >= EPISODE_CAP:
            raise EpisodeCapExceeded(
                f"absorption from state {s} exceeded {EPISODE_CAP} steps; transient set is misclassified"
            )
        nxt = table.successors(pos[active], rng.random(active.size))
        pos[active] = nxt
        tau[active] += 1
        active = active[~rec[nxt]]
        steps += 1
    cls = st.cls_map[pos]
    d = np.asarray(st.periods)[cls]
    k = (st.phase_map[pos] - tau) % d
    cols = np.asarray(st.column_offsets)[cls] + k
    return np.bincount(cols, minlength=st.N)


def estimate_weights(mrp: Mrp, st: ChainStructure, M: int, sampler: Sampler, threads: int = 1) -> PhaseWeights:
    """Monte-Carlo absorption estimate with ``M`` episodes per transient state.

    Recurrent rows are the exact phase indicators. Each transient state has its
    own random stream, so the result does not depend on ``threads``.
    """
    if M < 1:
        raise ValueError("M must be positive")
    w = _phase_indicators(st)

    def run(s):
        return _absorb_episodes(mrp, st, s, M, sampler.stream(Purpose.WEIGHTS, state=s))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            counts = list(pool.map(run, st.transient))
    else:
        counts = [run(s) for s in st.transient]
    for s, c in zip(st.transient, counts):
        w[s] = c / M
    return PhaseWeights(st, w, "estimated", M, sampler.seed)


def required_m(eps_b: float, t_count: int, N: int, delta: float) -> int:
    """Episodes per transient state for a uniform weight error ``eps_b`` w.p. ``1 - delta``."""
    if not (0 < eps_b < 1) or not (0 < delta < 1) or t_count < 1 or N < 1:
        raise ValueError(
            f"need 0 < eps_b < 1, 0 < delta < 1, t_count >= 1, N >= 1; got {eps_b}, {delta}, {t_count}, {N}"
        )
    return max(1, budget_ceil(math.log(2 * t_count * N / delta) / (2 * eps_b ** 2)))


def gauge_deviation(g_hat: GaugeMap, g_exact: GaugeMap) -> float:
    """Exact sup-operator norm of the difference of two gauge maps with shared anchors."""
    if tuple(g_hat.anchors) != tuple(g_exact.anchors) or g_hat.structure.n != g_exact.structure.n:
        raise ValueError("gauge maps have different anchors")
    return float(np.abs(g_hat.weights.w - g_exact.weights.w).sum(axis=1).max())
