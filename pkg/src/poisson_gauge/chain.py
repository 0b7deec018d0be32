"""Markov reward processes, validation, and seeded generative sampling.

States are 0-based. A :class:`Mrp` holds a dense row-stochastic matrix and a
state reward vector; it is never validated implicitly so that malformed inputs
can still be handed to :func:`validate` for a full report.

Randomness comes from counter-based Philox streams. Every stream is addressed
by ``(seed, purpose, state, iteration)`` so that a synchronous sweep over
states draws the same numbers no matter how the work is split across workers.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

ROW_SUM_TOL = 1e-9

_MASK64 = (1 << 64) - 1


class ChainValidationError(ValueError):
    """Raised when a chain fails validation where a valid chain is required."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("; ".join(report.issues))


@dataclass(frozen=True, eq=False)
class Mrp:
    """Markov reward process ``(P, r)`` with a declared reward bound ``R``."""

    P: np.ndarray
    r: np.ndarray
    R: float

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64)
        r = np.array(self.r, dtype=np.float64).reshape(-1)
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "R", float(self.R))

    @classmethod
    def from_arrays(cls, P, r, R: float | None = None) -> "Mrp":
        r = np.asarray(r, dtype=np.float64)
        if R is None:
            R = float(np.max(np.abs(r))) if r.size else 0.0
        return cls(P, r, R)

    @property
    def n(self) -> int:
        return int(self.P.shape[0])

    @cached_property
    def table(self) -> "TransitionTable":
        return TransitionTable(self.P)

    def to_json(self) -> dict:
        return {"n": self.n, "P": self.P.tolist(), "r": self.r.tolist(), "R": self.R}

    @classmethod
    def from_json(cls, obj: dict) -> "Mrp":
        mrp = cls(obj["P"], obj["r"], obj.get("R", max((abs(x) for x in obj["r"]), default=0.0)))
        if "n" in obj and int(obj["n"]) != mrp.P.shape[0]:
            raise ChainValidationError(
                ValidationReport(False, [f"declared n={obj['n']} but P has {mrp.P.shape[0]} rows"])
            )
        return mrp


@dataclass
class ValidationReport:
    ok: bool
    issues: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate(mrp: Mrp, tol: float = ROW_SUM_TOL) -> ValidationReport:
    """Check stochasticity of ``P`` and the reward bound; list every violation."""
    issues: list[str] = []
    P, r = mrp.P, mrp.r
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        return ValidationReport(False, [f"P must be a non-empty square matrix, got shape {P.shape}"])
    n = P.shape[0]
    if r.shape != (n,):
        issues.append(f"r has length {r.size}, expected {n}")
    bad = np.argwhere(~np.isfinite(P))
    for s, t in bad:
        issues.append(f"non-finite entry at ({s},{t})")
    for s, t in np.argwhere(P < 0):
        issues.append(f"negative entry at ({s},{t}): {P[s, t]!r}")
    sums = P.sum(axis=1)
    for s in np.flatnonzero(~(np.abs(sums - 1.0) <= tol)):
        issues.append(f"row {s} sums to {sums[s]:.12g}")
    if not np.isfinite(mrp.R) or mrp.R < 0:
        issues.append(f"reward bound R={mrp.R!r} must be finite and non-negative")
    if r.shape == (n,):
        for s in np.flatnonzero(~np.isfinite(r)):
            issues.append(f"non-finite reward at state {s}")
        for s in np.flatnonzero(np.abs(r) > mrp.R):
            issues.append(f"|r({s})|={abs(r[s]):.12g} exceeds R={mrp.R:.12g}")
    return ValidationReport(not issues, issues)


def load_chain(path: str | Path, tol: float = ROW_SUM_TOL) -> Mrp:
    """Load a chain JSON file ``{"n", "P", "r", "R"}`` and validate it."""
    with open(path) as fh:
        mrp = Mrp.from_json(json.load(fh))
    report = validate(mrp, tol)
    if not report.ok:
        raise ChainValidationError(report)
    return mrp


def save_chain(mrp: Mrp, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(mrp.to_json(), fh)


class TransitionTable:
    """Inverse-CDF lookup over the positive entries of each row.

    Rows are padded to the maximum out-degree. The last real bucket of a row
    has cumulative value ``inf`` so rounding slack in the row sum can never
    push a draw past the support.
    """

    def __init__(self, P: np.ndarray):
        n = P.shape[0]
        supports = [np.flatnonzero(P[s] > 0) for s in range(n)]
        width = max(1, max(len(sp) for sp in supports))
        self.succ = np.zeros((n, width), dtype=np.int64)
        self.cum = np.full((n, width), np.inf)
        self.degree = np.array([len(sp) for sp in supports])
        for s, sp in enumerate(supports):
            if len(sp) == 0:
                continue
            self.succ[s, : len(sp)] = sp
            self.succ[s, len(sp):] = sp[-1]
            c = np.cumsum(P[s, sp])
            c[-1] = np.inf
            self.cum[s, : len(sp)] = c

    def successors(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Map uniforms ``u`` in [0, 1) drawn at ``states`` to successor states."""
        states = np.asarray(states)
        k = (self.cum[states] <= u[..., None]).sum(axis=-1)
        return self.succ[states, k]


class Purpose(enum.IntEnum):
    """Tags separating the random streams of different pipeline stages."""

    GENERIC = 0
    STRUCTURE = 1
    WEIGHTS = 2
    SWEEP = 3
    RESIDUAL = 4
    TRANSIENT_COST = 5


class StreamLabel(NamedTuple):
    purpose: int
    state: int = 0
    iteration: int = 0


class Sampler:
    """Factory of independent, reproducible random streams for one seed.

    ``stream(label)`` always returns a fresh generator positioned at the start
    of the stream named by ``label``; two calls with the same label replay
    the same numbers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        ss = np.random.SeedSequence(self.seed & _MASK64)
        self._key = ss.generate_state(2, dtype=np.uint64)

    def stream(self, purpose: int = Purpose.GENERIC, state: int = 0, iteration: int = 0) -> np.random.Generator:
        label = StreamLabel(int(purpose), int(state), int(iteration))
        counter = np.array([0, label.state, label.iteration, label.purpose], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))

    def __repr__(self) -> str:
        return f"Sampler(seed={self.seed})"


@dataclass
class SamplerState:
    """A single labelled stream: ``(seed, stream_label)`` plus its position."""

    seed: int
    stream_label: StreamLabel = StreamLabel(Purpose.GENERIC)
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = Sampler(self.seed).stream(*self.stream_label)


def _row_ok(P: np.ndarray, s: int) -> bool:
    row = P[s]
    return bool(np.all(np.isfinite(row)) and np.all(row >= 0) and abs(row.sum() - 1.0) <= ROW_SUM_TOL)


def sample_next(mrp: Mrp, s: int, sampler: SamplerState | np.random.Generator) -> int:
    """Draw one successor of ``s`` from ``P(s, .)`` by inverse CDF."""
    if not 0 <= s < mrp.n:
        raise IndexError(f"state {s} out of range for n={mrp.n}")
    if not _row_ok(mrp.P, s):
        raise ChainValidationError(ValidationReport(False, [f"row {s} is not a probability vector"]))
    rng = sampler.rng if isinstance(sampler, SamplerState) else sampler
    u = rng.random(1)
    return int(mrp.table.successors(np.array([s]), u)[0])


def sample_many(mrp: Mrp, s: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent successors of ``s``."""
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    u = rng.random(count)
    return mrp.table.successors(np.full(count, s), u)


def cesaro_gain(mrp: Mrp, horizon: int) -> np.ndarray:
    """Truncated Cesaro average ``(1/T) sum_{t<T} P^t r``.

    Uses binary doubling on matrix powers, so the cost is ``O(n^3 log T)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    P = mrp.P
    n = mrp.n
    power = P.copy()  # P^(2^j)
    block = np.eye(n)  # sum_{t < 2^j} P^t
    offset = np.eye(n)  # P^(bits consumed so far)
    total = np.zeros(n)
    T = int(horizon)
    while T:
        if T & 1:
            total += offset @ (block @ mrp.r)
            offset = offset @ power
        T >>= 1
        if T:
            block = block + power @ block
            power = power @ power
    return total / horizon


def swap2() -> Mrp:
    """Two-state period-two chain with rewards (1, 0)."""
    return Mrp([[0.0, 1.0], [1.0, 0.0]], [1.0, 0.0], 1.0)


def abs4() -> Mrp:
    """Two absorbing states (rewards 1, 0) fed by a pair of transient states."""
    P = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.5],
        [0.0, 0.3, 0.7, 0.0],
    ]
    return Mrp(P, [1.0, 0.0, 0.0, 0.0], 1.0)
