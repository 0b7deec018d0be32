"""Projected stochastic approximation for the gauge-fixed Poisson solution.

Each iteration draws one successor per state and applies

    v_half = (1 - a_t) v_t + a_t (r + v_t[succ])
    v_next = Pi v_half

where ``Pi`` is a (learned or exact) gauge map. After the value iterate is
obtained, the peripheral residual is estimated at the anchors and spread over
all states with the phase weights. Two scalar-gain baselines share the same
sampling streams so that curves are directly comparable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .chain import Mrp, Purpose, Sampler, sample_many
from .gauge import GaugeMap, PhaseWeights, apply_gauge
from .structure import ChainStructure

# Iterations per sweep stream; part of the reproducibility contract.
SWEEP_BLOCK = 128


@dataclass(frozen=True)
class StepSchedule:
    """``alpha / (t + t0)`` (inverse-linear) or ``alpha (t + offset)^-gamma_exp``."""

    kind: str
    alpha: float
    t0: float = 1.0
    gamma_exp: float = 1.0
    offset: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.kind == "inverse-linear":
            if self.t0 < self.alpha:
                raise ValueError(f"inverse-linear schedule needs t0 >= alpha, got t0={self.t0}, alpha={self.alpha}")
        elif self.kind == "polynomial":
            if not (0.5 < self.gamma_exp <= 1):
                raise ValueError("polynomial exponent must lie in (0.5, 1]")
            if self.offset < 1:
                raise ValueError("polynomial offset must be >= 1")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def inverse_linear(cls, alpha: float, t0: float) -> "StepSchedule":
        return cls("inverse-linear", alpha, t0=t0)

    @classmethod
    def polynomial(cls, alpha: float = 1.0, gamma_exp: float = 0.65, offset: float = 500) -> "StepSchedule":
        return cls("polynomial", alpha, gamma_exp=gamma_exp, offset=offset)

    @classmethod
    def parse(cls, text: str) -> "StepSchedule":
        """``"poly:1.0,0.65,500"`` or ``"inv:4,8"``."""
        kind, _, args = text.partition(":")
        vals = [float(x) for x in args.split(",") if x]
        if kind in ("poly", "polynomial") and len(vals) == 3:
            return cls.polynomial(*vals)
        if kind in ("inv", "inverse-linear") and len(vals) == 2:
            return cls.inverse_linear(*vals)
        raise ValueError(f"cannot parse schedule {text!r}; use poly:a,g,off or inv:a,t0")

    def __str__(self) -> str:
        if self.kind == "polynomial":
            return f"poly:{self.alpha:g},{self.gamma_exp:g},{self.offset:g}"
        return f"inv:{self.alpha:g},{self.t0:g}"

    def __call__(self, t: int) -> float:
        if self.kind == "polynomial":
            return self.alpha * (t + self.offset) ** (-self.gamma_exp)
        return self.alpha / (t + self.t0)


DEFAULT_SCHEDULE = StepSchedule.polynomial(1.0, 0.65, 500)


@dataclass(frozen=True)
class SaConfig:
    schedule: StepSchedule = DEFAULT_SCHEDULE
    iterations: int = 12000
    log_every: int = 120
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")
        if self.iterations and self.log_every > self.iterations:
            raise ValueError("log_every must not exceed iterations")

    def logged(self, t: int) -> bool:
        return t % self.log_every == 0 or t == self.iterations


@dataclass
class TracePoint:
    t: int
    v: np.ndarray
    err: Optional[float] = None


@dataclass
class SolveTrace:
    points: list = field(default_factory=list)

    def append(self, t: int, v: np.ndarray, err: Optional[float] = None) -> None:
        if self.points and t <= self.points[-1].t:
            raise ValueError("trace iterations must increase")
        self.points.append(TracePoint(t, v.copy(), err))

    @property
    def iterations(self) -> list:
        return [p.t for p in self.points]

    def rows(self) -> list:
        return [(p.t, float(np.max(np.abs(p.v))) if p.v.size else 0.0, p.err) for p in self.points]


@dataclass(frozen=True, eq=False)
class ResidualEstimate:
    theta: np.ndarray
    g_hat: np.ndarray
    J: int

    def to_json(self) -> dict:
        return {"theta": self.theta.tolist(), "g_hat": self.g_hat.tolist(), "J": self.J}


Monitor = Callable[[int, np.ndarray], Optional[float]]


def _sweeps(mrp: Mrp, sampler: Sampler, T: int):
    """Yield, for ``t = 0..T-1``, the successor of every state at iteration ``t``."""
    n = mrp.n
    states = np.broadcast_to(np.arange(n), (SWEEP_BLOCK, n))
    for block in range(math.ceil(T / SWEEP_BLOCK)):
        u = sampler.stream(Purpose.SWEEP, iteration=block).random((SWEEP_BLOCK, n))
        succ = mrp.table.successors(states, u)
        for row in succ[: min(SWEEP_BLOCK, T - block * SWEEP_BLOCK)]:
            yield row


def _iterate(
    mrp: Mrp,
    cfg: SaConfig,
    project: Optional[Callable[[np.ndarray], np.ndarray]],
    v0: Optional[np.ndarray],
    monitor: Optional[Monitor],
    exact_expectation: bool = False,
) -> tuple[np.ndarray, SolveTrace]:
    n = mrp.n
    r = mrp.r
    v = np.zeros(n) if v0 is None else np.array(v0, dtype=np.float64)
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ValueError("v0 must be a finite vector of length n")
    if project is not None:
        v = project(v)
    trace = SolveTrace()
    trace.append(0, v, monitor(0, v) if monitor else None)
    draws = None if exact_expectation else _sweeps(mrp, Sampler(cfg.seed), cfg.iterations)
    for t in range(cfg.iterations):
        a = cfg.schedule(t)
        target = r + (mrp.P @ v if draws is None else v[next(draws)])
        v = (1.0 - a) * v + a * target
        if project is not None:
            v = project(v)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"iterate became non-finite at iteration {t + 1}")
        if cfg.logged(t + 1):
            trace.append(t + 1, v, monitor(t + 1, v) if monitor else None)
    return v, trace


def projected_sa(
    mrp: Mrp,
    gauge: GaugeMap,
    cfg: SaConfig,
    v0: Optional[np.ndarray] = None,
    *,
    monitor: Optional[Monitor] = None,
    exact_expectation: bool = False,
) -> tuple[np.ndarray, SolveTrace]:
    """Run projected quotient stochastic approximation.

    Parameters
    ----------
    mrp : Mrp
        Chain and rewards; only sampled, never solved.
    gauge : GaugeMap
        Exact or learned gauge; the iterate stays zero at its anchors.
    cfg : SaConfig
        Step schedule, iteration budget, logging period, and seed.
    v0 : ndarray, optional
        Initial iterate (zero by default); it is projected before the first step.
    monitor : callable, optional
        ``monitor(t, v_t)`` is called at every logged iteration; a returned
        float is stored as the trace error value.
    exact_expectation : bool
        Replace the sampled target by ``r + P v`` (deterministic projected
        averaging), useful for separating noise from contraction.

    Returns
    -------
    v_T : ndarray
    trace : SolveTrace
    """
    if gauge.structure.n != mrp.n:
        raise ValueError("gauge and chain dimensions disagree")
    return _iterate(mrp, cfg, lambda x: apply_gauge(gauge, x), v0, monitor, exact_expectation)


def estimate_residual(
    mrp: Mrp, v_T: np.ndarray, gauge: GaugeMap, J: int, sampler: Sampler, iteration: int = 0
) -> ResidualEstimate:
    """Anchor residual coordinates from ``J`` successors each, spread by the weights."""
    if J < 1:
        raise ValueError("J must be positive")
    v_T = np.asarray(v_T, dtype=np.float64)
    theta = np.empty(gauge.structure.N)
    for col, a in enumerate(gauge.anchors):
        ys = sample_many(mrp, a, J, sampler.stream(Purpose.RESIDUAL, state=a, iteration=iteration))
        theta[col] = mrp.r[a] + v_T[ys].mean() - v_T[a]
    return ResidualEstimate(theta, gauge.weights.w @ theta, J)


def gain_profile(res: ResidualEstimate, weights: PhaseWeights, st: ChainStructure) -> np.ndarray:
    """Phase-average the anchor residuals per class and weight by class absorption."""
    class_gain = np.array([res.theta[st.column(i, 0): st.column(i, 0) + d].mean() for i, d in enumerate(st.periods)])
    return weights.class_absorption() @ class_gain


def scalar_gain(mrp: Mrp, v: np.ndarray, anchor: int, J: int, sampler: Sampler, iteration: int = 0) -> float:
    ys = sample_many(mrp, anchor, J, sampler.stream(Purpose.RESIDUAL, state=anchor, iteration=iteration))
    return float(mrp.r[anchor] + v[ys].mean() - v[anchor])


def unprojected_td(
    mrp: Mrp, cfg: SaConfig, anchor: int, J: int = 220, *, monitor: Optional[Monitor] = None
) -> tuple[float, SolveTrace]:
    """Plain TD-style averaging without any projection; scalar gain at ``anchor``."""
    v, trace = _iterate(mrp, cfg, None, None, monitor)
    return scalar_gain(mrp, v, anchor, J, Sampler(cfg.seed), cfg.iterations), trace


def anchor_only_td(
    mrp: Mrp, cfg: SaConfig, anchor: int, J: int = 220, *, monitor: Optional[Monitor] = None
) -> tuple[np.ndarray, SolveTrace]:
    """Single-anchor gauge ``v - v(anchor) 1``; the gain is a constant profile."""

    def project(x):
        return x - x[anchor]

    v, trace = _iterate(mrp, cfg, project, None, monitor)
    g = scalar_gain(mrp, v, anchor, J, Sampler(cfg.seed), cfg.iterations)
    return np.full(mrp.n, g), trace


def oracle_variance(mrp: Mrp, v: np.ndarray) -> float:
    """Largest per-state variance of the one-sample target ``r(s) + v(s')``."""
    v = np.asarray(v, dtype=np.float64)
    mean = mrp.P @ v
    return float(np.max(mrp.P @ (v * v) - mean * mean))
