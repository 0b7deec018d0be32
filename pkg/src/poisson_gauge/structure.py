"""Communication structure of a chain: recurrent classes, periods, phases, anchors.

The structure can be learned from generative samples (:func:`learn_support_graph`)
or read off a known matrix (:func:`exact_support_graph`); both feed
:func:`analyze_structure`, which is deterministic and canonical:

* classes are ordered by their smallest state,
* phase 0 of a class is the cyclic set containing that smallest state,
* the anchor of a phase is its smallest state.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .chain import Mrp, Purpose, Sampler


@dataclass(frozen=True)
class SupportGraph:
    n: int
    edges: frozenset

    def __post_init__(self):
        for s, t in self.edges:
            if not (0 <= s < self.n and 0 <= t < self.n):
                raise ValueError(f"edge ({s},{t}) out of range for n={self.n}")

    @cached_property
    def successors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for s, t in sorted(self.edges):
            out[s].append(t)
        return out


@dataclass(frozen=True)
class ChainStructure:
    """Recurrent classes with their cyclic decomposition and anchors.

    ``cyclic[i][k]`` is the sorted tuple of states in phase ``k`` of class
    ``i``; ``anchors`` and ``index_set`` share the lexicographic ``(i, k)``
    order used for the columns of every weight matrix.
    """

    n: int
    classes: tuple
    transient: tuple
    periods: tuple
    cyclic: tuple

    @property
    def m(self) -> int:
        return len(self.classes)

    @cached_property
    def index_set(self) -> tuple:
        return tuple((i, k) for i, d in enumerate(self.periods) for k in range(d))

    @property
    def N(self) -> int:
        return sum(self.periods)

    @cached_property
    def anchors(self) -> tuple:
        return tuple(self.cyclic[i][k][0] for i, k in self.index_set)

    @cached_property
    def column_offsets(self) -> tuple:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.periods)[:-1]]))

    def column(self, i: int, k: int) -> int:
        return self.column_offsets[i] + k

    @cached_property
    def cls_map(self) -> np.ndarray:
        out = np.full(self.n, -1, dtype=np.int64)
        for i, members in enumerate(self.classes):
            out[list(members)] = i
        out.setflags(write=False)
        return out

    @cached_property
    def phase_map(self) -> np.ndarray:
        out = np.full(self.n, -1, dtype=np.int64)
        for phases in self.cyclic:
            for k, members in enumerate(phases):
                out[list(members)] = k
        out.setflags(write=False)
        return out

    @cached_property
    def recurrent_mask(self) -> np.ndarray:
        return self.cls_map >= 0

    def check(self, graph: SupportGraph | None = None) -> None:
        """Assert the partition, phase, and anchor invariants; raise on failure."""
        seen = sorted([s for c in self.classes for s in c] + list(self.transient))
        if seen != list(range(self.n)):
            raise AssertionError("classes and transient set do not partition the states")
        for i, (members, phases) in enumerate(zip(self.classes, self.cyclic)):
            if len(phases) != self.periods[i]:
                raise AssertionError(f"class {i}: {len(phases)} phases but period {self.periods[i]}")
            if sorted(s for ph in phases for s in ph) != list(members):
                raise AssertionError(f"class {i}: phases do not partition the class")
            if not all(phases):
                raise AssertionError(f"class {i}: empty cyclic set")
        for (i, k), a in zip(self.index_set, self.anchors):
            if a not in self.cyclic[i][k]:
                raise AssertionError(f"anchor {a} not in C[{i},{k}]")
        if graph is not None:
            cls, ph = self.cls_map, self.phase_map
            for u, v in graph.edges:
                if cls[u] >= 0:
                    if cls[v] != cls[u]:
                        raise AssertionError(f"edge ({u},{v}) leaves recurrent class {cls[u]}")
                    if ph[v] != (ph[u] + 1) % self.periods[cls[u]]:
                        raise AssertionError(f"edge ({u},{v}) breaks the cyclic order")

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "classes": [list(c) for c in self.classes],
            "transient": list(self.transient),
            "periods": list(self.periods),
            "cyclic": [[list(ph) for ph in phases] for phases in self.cyclic],
            "anchors": list(self.anchors),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChainStructure":
        st = cls(
            n=int(obj["n"]),
            classes=tuple(tuple(int(s) for s in c) for c in obj["classes"]),
            transient=tuple(int(s) for s in obj["transient"]),
            periods=tuple(int(d) for d in obj["periods"]),
            cyclic=tuple(tuple(tuple(int(s) for s in ph) for ph in phases) for phases in obj["cyclic"]),
        )
        if "anchors" in obj and list(obj["anchors"]) != list(st.anchors):
            raise ValueError("stored anchors disagree with the canonical anchors")
        st.check()
        return st


def exact_support_graph(P: np.ndarray) -> SupportGraph:
    P = np.asarray(P)
    rows, cols = np.nonzero(P > 0)
    return SupportGraph(P.shape[0], frozenset(zip(rows.tolist(), cols.tolist())))


def learn_support_graph(mrp: Mrp, K: int, sampler: Sampler) -> SupportGraph:
    """Union over states of ``K`` sampled successors (no false positives)."""
    if K < 0:
        raise ValueError("K must be non-negative")
    edges = set()
    if K > 0:
        for s in range(mrp.n):
            u = sampler.stream(Purpose.STRUCTURE, state=s).random(K)
            succ = np.unique(mrp.table.successors(np.full(K, s), u))
            edges.update((s, int(t)) for t in succ)
    return SupportGraph(mrp.n, frozenset(edges))


def _closed_components(graph: SupportGraph) -> list[list[int]]:
    n = graph.n
    if graph.edges:
        src, dst = map(np.array, zip(*graph.edges))
    else:
        src = dst = np.empty(0, dtype=np.int64)
    adj = csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    has_exit = np.zeros(n_comp, dtype=bool)
    if len(src):
        has_exit[labels[src][labels[src] != labels[dst]]] = True
    comps = [np.flatnonzero(labels == c).tolist() for c in range(n_comp) if not has_exit[c]]
    return sorted(comps, key=lambda c: c[0])


def _cyclic_partition(members: list[int], succ: list[list[int]]) -> tuple[int, tuple]:
    root = members[0]
    inside = set(members)
    level = {root: 0}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in succ[u]:
            if v in inside and v not in level:
                level[v] = level[u] + 1
                queue.append(v)
    d = 0
    for u in members:
        for v in succ[u]:
            if v in inside:
                d = math.gcd(d, level[u] + 1 - level[v])
    d = abs(d) or 1
    phases = [[] for _ in range(d)]
    for s in members:
        phases[level[s] % d].append(s)
    return d, tuple(tuple(ph) for ph in phases)


def analyze_structure(graph: SupportGraph) -> ChainStructure:
    """Closed SCCs, BFS-level-gcd periods, cyclic sets, and canonical anchors."""
    succ = graph.successors
    dangling = [s for s in range(graph.n) if not succ[s]]
    if dangling:
        raise ValueError(f"states without outgoing edges: {dangling[:10]}")
    comps = _closed_components(graph)
    # A finite stochastic matrix always has at least one closed class.
    assert comps, "support graph has no closed component"
    periods, cyclic = [], []
    for members in comps:
        d, phases = _cyclic_partition(members, succ)
        periods.append(d)
        cyclic.append(phases)
    recurrent = {s for c in comps for s in c}
    return ChainStructure(
        n=graph.n,
        classes=tuple(tuple(c) for c in comps),
        transient=tuple(s for s in range(graph.n) if s not in recurrent),
        periods=tuple(periods),
        cyclic=tuple(cyclic),
    )


def exact_structure(mrp: Mrp) -> ChainStructure:
    return analyze_structure(exact_support_graph(mrp.P))


def min_positive_probability(P: np.ndarray) -> float:
    P = np.asarray(P)
    return float(P[P > 0].min())


def budget_ceil(x: float) -> int:
    """Ceiling that ignores floating-point overshoot within 1e-9 relative of an integer."""
    return math.ceil(x * (1 - 1e-9))


def required_k(p_min: float, n: int, delta: float) -> int:
    """Samples per state so the learned graph is exact w.p. at least ``1 - delta``."""
    if not (0 < p_min <= 1) or not (0 < delta < 1) or n < 1:
        raise ValueError(f"need 0 < p_min <= 1, 0 < delta < 1, n >= 1; got {p_min}, {delta}, {n}")
    return max(1, budget_ceil(math.log(n * n / delta) / p_min))
