"""Block-structured benchmark chains and the three-method error-curve protocol.

A chain is described by an :class:`MrpSpec`: recurrent classes with ``m_i``
states per phase and period ``d_i`` (each state moves uniformly to the next
phase), followed by a line of ``L`` transient states that drift forward and
exit into the phase-0 entry state of each class according to an exit
schedule.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .chain import Mrp, Sampler, validate
from .gauge import GaugeMap, estimate_weights, exact_weights
from .oracle import exact_solve
from .solver import (
    DEFAULT_SCHEDULE,
    SaConfig,
    StepSchedule,
    anchor_only_td,
    estimate_residual,
    gain_profile,
    projected_sa,
    scalar_gain,
    unprojected_td,
)
from .structure import ChainStructure, analyze_structure, learn_support_graph

METHODS = ("anchor_only", "projected", "unprojected")


class StageError(RuntimeError):
    """A pipeline stage failed; the message starts with the stage name."""


@dataclass(frozen=True)
class ClassSpec:
    m: int
    d: int
    phase_rewards: tuple

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise ValueError("phase size and period must be positive")
        if len(self.phase_rewards) != self.d:
            raise ValueError(f"need {self.d} phase rewards, got {len(self.phase_rewards)}")

    @property
    def gain(self) -> float:
        return float(np.mean(self.phase_rewards))


@dataclass(frozen=True)
class MrpSpec:
    """Declarative chain description.

    ``exit_schedule`` is ``("two-class-linear", q_lo, q_hi)`` or
    ``("three-class", a)``.
    """

    name: str
    classes: tuple
    transient_len: int
    epsilon: float
    eta: float
    exit_schedule: tuple

    def __post_init__(self):
        if not (0 < self.eta < 1):
            raise ValueError("eta must lie in (0, 1)")
        if not (0 <= self.epsilon < 1):
            raise ValueError("epsilon must lie in [0, 1)")
        if self.transient_len < 1:
            raise ValueError("transient_len must be positive")
        kind = self.exit_schedule[0]
        arity = {"two-class-linear": 2, "three-class": 3}.get(kind)
        if arity is None:
            raise ValueError(f"unknown exit schedule {kind!r}")
        if arity != len(self.classes):
            raise ValueError(f"{kind} schedule needs {arity} classes, spec has {len(self.classes)}")

    @property
    def n(self) -> int:
        return sum(c.m * c.d for c in self.classes) + self.transient_len

    def scaled(self, factor: int) -> "MrpSpec":
        """Divide every phase size by ``factor`` (at least one state per phase)."""
        if factor <= 1:
            return self
        classes = tuple(replace(c, m=max(1, c.m // factor)) for c in self.classes)
        return replace(self, classes=classes)

    def exit_masses(self) -> np.ndarray:
        """``L x m`` matrix of exit probabilities, each row summing to one."""
        L = self.transient_len
        xi = np.arange(L) / (L - 1) if L > 1 else np.zeros(1)
        kind = self.exit_schedule[0]
        if kind == "two-class-linear":
            lo, hi = self.exit_schedule[1:]
            q = lo + (hi - lo) * xi
            return np.stack([q, 1 - q], axis=1)
        a = self.exit_schedule[1]
        return np.stack([a * (1 - xi), a * xi, np.full(L, 1 - a)], axis=1)


def build_mrp(spec: MrpSpec) -> tuple[Mrp, ChainStructure]:
    """Assemble ``(P, r)`` and the known structure.

    Layout: class blocks in order with contiguous phases, then transients.
    """
    n = spec.n
    P = np.zeros((n, n))
    r = np.zeros(n)
    classes, cyclic, entries = [], [], []
    start = 0
    for c in spec.classes:
        phases = [list(range(start + k * c.m, start + (k + 1) * c.m)) for k in range(c.d)]
        for k, members in enumerate(phases):
            nxt = phases[(k + 1) % c.d]
            P[np.ix_(members, nxt)] = 1.0 / c.m
            r[members] = c.phase_rewards[k]
        classes.append(tuple(range(start, start + c.m * c.d)))
        cyclic.append(tuple(tuple(ph) for ph in phases))
        entries.append(start)
        start += c.m * c.d
    L, eps, eta = spec.transient_len, spec.epsilon, spec.eta
    exits = spec.exit_masses()
    if not np.allclose(exits.sum(axis=1), 1.0, atol=1e-12) or np.any(exits < 0):
        raise ValueError("exit schedule masses must be non-negative and sum to one per transient state")
    trans = list(range(start, start + L))
    for j, s in enumerate(trans):
        if j < L - 1:
            P[s, s] = (1 - eta) * eps
            P[s, s + 1] = (1 - eta) * (1 - eps)
        else:
            P[s, s] = 1 - eta
        for i, e in enumerate(entries):
            P[s, e] += eta * exits[j, i]
    if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12, rtol=0):
        raise ValueError("constructed matrix is not row-stochastic")
    st = ChainStructure(
        n=n,
        classes=tuple(classes),
        transient=tuple(trans),
        periods=tuple(c.d for c in spec.classes),
        cyclic=tuple(cyclic),
    )
    # Phase rewards live in [0, 1].
    return Mrp(P, r, 1.0), st


def _c(m, d, *rewards):
    return ClassSpec(m, d, tuple(rewards))


def suite() -> list[MrpSpec]:
    """The six fixed benchmark chains."""
    return [
        MrpSpec("aperiodic_multichain", (_c(50, 1, 0.15), _c(50, 1, 0.85)), 60, 0.25, 0.08,
                ("two-class-linear", 0.15, 0.85)),
        MrpSpec("hard_gain_gap", (_c(20, 3, 0.0, 0.10, 0.20), _c(16, 5, 0.90, 0.95, 1.00, 0.85, 0.90)), 60,
                0.22, 0.07, ("two-class-linear", 0.10, 0.90)),
        MrpSpec("safety", (_c(35, 2, 0.80, 1.00), _c(1, 1, 0.0)), 60, 0.18, 0.10,
                ("two-class-linear", 0.10, 0.95)),
        MrpSpec("three_class_var_branch", (_c(20, 2, 0.0, 0.20), _c(18, 3, 0.30, 0.50, 0.70), _c(40, 1, 0.95)),
                60, 0.22, 0.08, ("three-class", 0.90)),
        MrpSpec("var_branch_2v3", (_c(30, 2, 0.20, 0.80), _c(24, 3, 0.05, 0.05, 0.80)), 60, 0.20, 0.07,
                ("two-class-linear", 0.15, 0.85)),
        MrpSpec("var_branch_2v4", (_c(28, 2, 0.20, 0.80), _c(20, 4, 0.0, 0.0, 0.80, 0.80)), 60, 0.20, 0.07,
                ("two-class-linear", 0.15, 0.85)),
    ]


def suite_spec(name: str) -> MrpSpec:
    for spec in suite():
        if spec.name == name:
            return spec
    raise KeyError(f"unknown instance {name!r}; choose from {[s.name for s in suite()]}")


@dataclass(frozen=True)
class ExperimentConfig:
    td_iterations: int = 12000
    log_every: int = 120
    K: int = 150
    M: int = 4000
    J: int = 220
    seeds: tuple = (0, 1, 2, 3, 4)
    schedule: StepSchedule = DEFAULT_SCHEDULE

    def __post_init__(self):
        if self.td_iterations < 0 or min(self.log_every, self.K, self.M, self.J) < 1 or not self.seeds:
            raise ValueError("experiment budgets must be positive and at least one seed is required")

    @classmethod
    def desk(cls, **kw) -> "ExperimentConfig":
        """Reduced profile used with phase sizes divided by a scale factor."""
        kw.setdefault("td_iterations", 4000)
        return cls(**kw)


@dataclass
class ErrorCurve:
    instance: str
    method: str
    seed: int
    points: list = field(default_factory=list)

    def final(self) -> float:
        return self.points[-1][1]

    def at(self, t: int) -> float:
        return dict(self.points)[t]


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:
        raise StageError(f"{name}: {exc}") from exc


def ground_truth(mrp: Mrp, st: ChainStructure) -> np.ndarray:
    return exact_solve(mrp, GaugeMap(exact_weights(mrp.P, st))).gain


def run_seed(spec: MrpSpec, cfg: ExperimentConfig, seed: int, mrp=None, gain=None) -> list[ErrorCurve]:
    if mrp is None:
        mrp, st_true = build_mrp(spec)
        gain = ground_truth(mrp, st_true)
    sampler = Sampler(seed)
    graph = _stage("structure", learn_support_graph, mrp, cfg.K, sampler)
    st = _stage("structure", analyze_structure, graph)
    weights = _stage("weights", estimate_weights, mrp, st, cfg.M, sampler)
    gauge = GaugeMap(weights)
    sa = SaConfig(cfg.schedule, cfg.td_iterations, min(cfg.log_every, max(cfg.td_iterations, 1)), seed)

    def profile_err(t, v):
        res = estimate_residual(mrp, v, gauge, cfg.J, sampler, iteration=t)
        return float(np.max(np.abs(gain_profile(res, weights, st) - gain)))

    anchor = st.classes[0][0]

    def scalar_err(t, v):
        return float(np.max(np.abs(scalar_gain(mrp, v, anchor, cfg.J, sampler, iteration=t) - gain)))

    curves = []
    _, tr = _stage("projected", projected_sa, mrp, gauge, sa, monitor=profile_err)
    curves.append(ErrorCurve(spec.name, "projected", seed, [(p.t, p.err) for p in tr.points]))
    _, tr = _stage("anchor_only", anchor_only_td, mrp, sa, anchor, cfg.J, monitor=scalar_err)
    curves.append(ErrorCurve(spec.name, "anchor_only", seed, [(p.t, p.err) for p in tr.points]))
    _, tr = _stage("unprojected", unprojected_td, mrp, sa, anchor, cfg.J, monitor=scalar_err)
    curves.append(ErrorCurve(spec.name, "unprojected", seed, [(p.t, p.err) for p in tr.points]))
    return curves


def run_experiment(spec: MrpSpec, cfg: ExperimentConfig, threads: int = 1) -> list[ErrorCurve]:
    """Three curves per seed: the learned-gauge pipeline and both scalar baselines."""
    mrp, st_true = build_mrp(spec)
    report = validate(mrp)
    if not report.ok:
        raise StageError(f"build: {report.issues}")
    gain = _stage("oracle", ground_truth, mrp, st_true)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_seed = list(pool.map(lambda s: run_seed(spec, cfg, s, mrp, gain), cfg.seeds))
    else:
        per_seed = [run_seed(spec, cfg, s, mrp, gain) for s in cfg.seeds]
    return sort_curves([c for group in per_seed for c in group])


def sort_curves(curves: list[ErrorCurve]) -> list[ErrorCurve]:
    return sorted(curves, key=lambda c: (c.instance, c.method, c.seed))


CSV_HEADER = ["instance", "method", "seed", "iteration", "err_linf"]


def write_curves(curves: list[ErrorCurve], path: str | Path) -> None:
    rows = sorted(
        (c.instance, c.method, c.seed, t, e) for c in curves for t, e in c.points
    )
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for inst, meth, seed, t, e in rows:
                w.writerow([inst, meth, seed, t, f"{e:.17g}"])
    except OSError as exc:
        raise OSError(f"cannot write curves to {path}: {exc}") from exc


def read_curves(path: str | Path) -> list[ErrorCurve]:
    curves: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["instance"], row["method"], int(row["seed"]))
            curves.setdefault(key, ErrorCurve(*key)).points.append((int(row["iteration"]), float(row["err_linf"])))
    return sort_curves(list(curves.values()))


def summarize(curves: list[ErrorCurve]) -> list[dict]:
    """Mean and population standard deviation across seeds per (instance, method, iteration)."""
    groups: dict = {}
    for c in curves:
        for t, e in c.points:
            groups.setdefault((c.instance, c.method, t), []).append(e)
    out = []
    for (inst, meth, t), errs in sorted(groups.items()):
        a = np.asarray(errs)
        out.append({"instance": inst, "method": meth, "iteration": t, "mean": float(a.mean()),
                    "std": float(a.std()), "n_seeds": len(errs)})
    return out


def write_summary(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "method", "iteration", "mean", "std", "n_seeds"])
        for row in rows:
            w.writerow([row["instance"], row["method"], row["iteration"], f"{row['mean']:.17g}",
                        f"{row['std']:.17g}", row["n_seeds"]])


def final_means(curves: list[ErrorCurve]) -> dict:
    """``{(instance, method): mean final error}``."""
    acc: dict = {}
    for c in curves:
        acc.setdefault((c.instance, c.method), []).append(c.final())
    return {k: float(np.mean(v)) for k, v in acc.items()}


def support_p_min_bound(spec: MrpSpec) -> float:
    """Lower bound on the smallest positive transition of the built chain."""
    exits = spec.exit_masses()
    moves = [(1 - spec.eta) * spec.epsilon, (1 - spec.eta) * (1 - spec.epsilon), 1 - spec.eta]
    return min([spec.eta * exits[exits > 0].min()] + [p for p in moves if p > 0]
               + [1.0 / c.m for c in spec.classes])
