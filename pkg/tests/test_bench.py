import numpy as np
import pytest

import poisson_gauge.bench as bench
from poisson_gauge import Sampler, analyze_structure, cesaro_gain, learn_support_graph, validate
from poisson_gauge.bench import (
    ClassSpec,
    ErrorCurve,
    ExperimentConfig,
    MrpSpec,
    build_mrp,
    ground_truth,
    read_curves,
    run_experiment,
    suite,
    suite_spec,
    summarize,
    write_curves,
)
from poisson_gauge.structure import min_positive_probability

SIZES = {
    "aperiodic_multichain": 160,
    "hard_gain_gap": 200,
    "safety": 131,
    "three_class_var_branch": 194,
    "var_branch_2v3": 192,
    "var_branch_2v4": 196,
}


def test_suite_sizes_and_validity():
    specs = suite()
    assert [s.name for s in specs] == list(SIZES)
    for spec in specs:
        mrp, st_ = build_mrp(spec)
        assert mrp.n == spec.n == SIZES[spec.name]
        assert validate(mrp).ok
        st_.check()


def test_suite_rows():
    hg = suite_spec("hard_gain_gap")
    assert hg.classes == (ClassSpec(20, 3, (0.0, 0.10, 0.20)), ClassSpec(16, 5, (0.90, 0.95, 1.00, 0.85, 0.90)))
    assert suite_spec("three_class_var_branch").exit_schedule == ("three-class", 0.90)
    with pytest.raises(KeyError):
        suite_spec("nope")


def test_degenerate_single_transient():
    spec = MrpSpec("tiny", (ClassSpec(1, 1, (1.0,)), ClassSpec(1, 1, (0.0,))), 1, 0.3, 0.2,
                   ("two-class-linear", 0.25, 0.75))
    mrp, st_ = build_mrp(spec)
    assert mrp.n == 3 and st_.transient == (2,)
    assert mrp.P[2, 2] == pytest.approx(0.8)
    assert mrp.P[2, 0] == pytest.approx(0.2 * 0.25) and mrp.P[2, 1] == pytest.approx(0.2 * 0.75)


def test_spec_validation():
    with pytest.raises(ValueError):
        MrpSpec("x", (ClassSpec(1, 1, (0.0,)),), 5, 0.2, 0.1, ("two-class-linear", 0.1, 0.9))
    with pytest.raises(ValueError):
        ClassSpec(2, 2, (0.0,))


def test_scaled_floors_at_one():
    spec = suite_spec("safety").scaled(5)
    assert [c.m for c in spec.classes] == [7, 1]
    assert spec.n == 7 * 2 + 1 + 60


def test_ground_truth_matches_cesaro_and_absorption():
    for spec in suite():
        mrp, st_ = build_mrp(spec)
        g = ground_truth(mrp, st_)
        assert np.abs(g - cesaro_gain(mrp, 100_000)).max() <= 1e-3
        # Closed form: absorption probability into each class times its phase-averaged reward.
        T = list(st_.transient)
        Q = mrp.P[np.ix_(T, T)]
        entries = [c[0] for c in st_.classes]
        B = np.linalg.solve(np.eye(len(T)) - Q, mrp.P[np.ix_(T, entries)])
        rbar = np.array([c.gain for c in spec.classes])
        assert np.allclose(g[T], B @ rbar, atol=1e-12)


def test_structure_recovery_on_suite():
    for spec in suite():
        mrp, st_true = build_mrp(spec)
        bound = bench.support_p_min_bound(spec)
        assert 0 < bound <= min_positive_probability(mrp.P) + 1e-15
        hits = sum(analyze_structure(learn_support_graph(mrp, 150, Sampler(s))) == st_true for s in range(40))
        assert hits >= 38, spec.name


def _small_cfg(**kw):
    kw.setdefault("td_iterations", 300)
    kw.setdefault("log_every", 100)
    kw.setdefault("M", 200)
    kw.setdefault("J", 50)
    kw.setdefault("seeds", (0, 1))
    return ExperimentConfig(**kw)


def test_zero_iterations_only_initial_point():
    curves = run_experiment(suite_spec("safety").scaled(5), _small_cfg(td_iterations=0))
    assert len(curves) == 6 and all([t for t, _ in c.points] == [0] for c in curves)


def test_experiment_deterministic_and_thread_independent():
    spec = suite_spec("var_branch_2v3").scaled(5)
    a = run_experiment(spec, _small_cfg())
    b = run_experiment(spec, _small_cfg())
    c = run_experiment(spec, _small_cfg(), threads=2)
    assert [x.points for x in a] == [x.points for x in b] == [x.points for x in c]
    assert [(x.method, x.seed) for x in a] == [(m, s) for m in bench.METHODS for s in (0, 1)]


def test_stage_errors_are_labelled(monkeypatch):
    def broken(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(bench, "estimate_weights", broken)
    with pytest.raises(bench.StageError, match="^weights: boom"):
        run_experiment(suite_spec("safety").scaled(5), _small_cfg())


def test_write_curves(tmp_path):
    p = tmp_path / "empty.csv"
    write_curves([], p)
    assert p.read_text() == "instance,method,seed,iteration,err_linf\n"
    one = [ErrorCurve("x", "projected", 3, [(0, 0.5), (10, 0.1)])]
    write_curves(one, p)
    assert len(p.read_text().splitlines()) == 3


def test_curves_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    curves = [
        ErrorCurve(inst, meth, seed, [(t, float(rng.random())) for t in (0, 120, 240)])
        for inst in ("a", "b") for meth in bench.METHODS for seed in (0, 1, 2)
    ]
    p = tmp_path / "c.csv"
    write_curves(curves, p)
    back = read_curves(p)
    assert [(c.instance, c.method, c.seed, c.points) for c in back] == \
        [(c.instance, c.method, c.seed, c.points) for c in curves]


def test_summarize():
    curves = [ErrorCurve("a", "projected", s, [(0, e), (5, 2 * e)]) for s, e in enumerate([1.0, 3.0])]
    rows = summarize(curves)
    assert rows[0] == {"instance": "a", "method": "projected", "iteration": 0, "mean": 2.0, "std": 1.0, "n_seeds": 2}
    assert rows[1]["mean"] == 4.0 and rows[1]["std"] == 2.0


def test_error_curve_accessors():
    c = ErrorCurve("a", "projected", 0, [(0, 1.0), (10, 0.5)])
    assert c.final() == 0.5 and c.at(0) == 1.0
