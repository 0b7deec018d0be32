import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from chains import exact_gauge, random_chain
from poisson_gauge import (
    ChainStructure,
    GaugeMap,
    Mrp,
    PhaseWeights,
    Sampler,
    cesaro_gain,
    exact_solve,
    exact_weights,
    gain_profile,
    quotient_diagnostics,
    return_identity_check,
    transient_cost_check,
)
from poisson_gauge.bench import build_mrp, suite
from poisson_gauge.oracle import (
    ConvergenceError,
    absorption_times,
    lyapunov_series,
    spectral_radius,
    stationary_distribution,
)
from poisson_gauge.solver import ResidualEstimate


def test_swap2_exact(swap2_chain):
    sol = exact_solve(swap2_chain, exact_gauge(swap2_chain))
    assert np.array_equal(sol.v_star, [0, 0])
    assert np.allclose(sol.g_star, [1, 0]) and np.allclose(sol.theta_star, [1, 0])
    assert np.allclose(sol.gain, [0.5, 0.5])


def test_abs4_exact(abs4_chain):
    sol = exact_solve(abs4_chain, exact_gauge(abs4_chain))
    assert np.allclose(sol.v_star, [0, 0, -270 / 169, -280 / 169], atol=1e-12)
    assert np.allclose(sol.g_star, [1, 0, 10 / 13, 7 / 13], atol=1e-12)
    assert np.allclose(sol.gain, [1, 0, 10 / 13, 7 / 13], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(-3, 3))
def test_constant_reward_constant_gain(seed, c):
    mrp, _, _ = random_chain(np.random.default_rng(seed))
    flat = Mrp(mrp.P, np.full(mrp.n, c), abs(c))
    sol = exact_solve(flat, exact_gauge(flat))
    assert np.allclose(sol.gain, c, atol=1e-10)


def test_stationary_periodic_block():
    P = np.roll(np.eye(3), 1, axis=1)
    assert np.allclose(stationary_distribution(P), 1 / 3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_exact_solution_properties(seed):
    mrp, _, _ = random_chain(np.random.default_rng(seed))
    g = exact_gauge(mrp)
    sol = exact_solve(mrp, g)
    # Fixed point of the projected Bellman map and confinement to the anchored subspace.
    assert np.abs(g(mrp.r + mrp.P @ sol.v_star) - sol.v_star).max() <= 1e-10
    assert np.abs(sol.v_star[list(g.anchors)]).max() <= 1e-10
    # Peripheral residual lies in the gauge kernel.
    assert np.abs(g(sol.g_star)).max() <= 1e-10
    # Poisson equation.
    assert np.abs(sol.g_star + sol.v_star - mrp.r - mrp.P @ sol.v_star).max() <= 1e-10
    # Phase-averaged residual reconstructs the gain.
    rec = gain_profile(ResidualEstimate(sol.theta_star, sol.g_star, 1), g.weights, g.structure)
    assert np.abs(rec - sol.gain).max() <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_solution_invariant_under_row_permutation(seed):
    rng = np.random.default_rng(seed)
    mrp, _, _ = random_chain(rng)
    g = exact_gauge(mrp)
    A = np.eye(mrp.n) - g.matrix() @ mrp.P
    b = g.matrix() @ mrp.r
    perm = rng.permutation(mrp.n)
    v_perm = np.linalg.solve(A[perm], b[perm])
    v_lstsq = np.linalg.lstsq(A, b, rcond=None)[0]
    v = exact_solve(mrp, g).v_star
    assert np.abs(v - v_perm).max() <= 1e-9 and np.abs(v - v_lstsq).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_gain_invariant_under_anchor_choice(seed):
    rng = np.random.default_rng(seed)
    mrp, _, _ = random_chain(rng)
    g = exact_gauge(mrp)
    stc = g.structure
    w = g.weights.w
    alt = [int(rng.choice(stc.cyclic[i][k])) for i, k in stc.index_set]
    E = np.zeros((stc.N, mrp.n))
    E[np.arange(stc.N), alt] = 1.0
    Pi_alt = np.eye(mrp.n) - w @ E
    v_alt = np.linalg.solve(np.eye(mrp.n) - Pi_alt @ mrp.P, Pi_alt @ mrp.r)
    g_alt = mrp.r + mrp.P @ v_alt - v_alt
    rec = gain_profile(ResidualEstimate(g_alt[alt], w @ g_alt[alt], 1), g.weights, stc)
    assert np.abs(rec - exact_solve(mrp, g).gain).max() <= 1e-9


@pytest.mark.parametrize("seed", range(8))
def test_gain_matches_cesaro(seed, abs4_chain, swap2_chain):
    mrp = [abs4_chain, swap2_chain][seed] if seed < 2 else random_chain(np.random.default_rng(seed))[0]
    gain = exact_solve(mrp, exact_gauge(mrp)).gain
    assert np.abs(cesaro_gain(mrp, 100_000) - gain).max() <= 1e-3


def test_spectral_radius_against_eigvals():
    rng = np.random.default_rng(0)
    for d in (1, 2, 5, 20, 60):
        for _ in range(5):
            A = rng.standard_normal((d, d)) / np.sqrt(d)
            assert spectral_radius(A) == pytest.approx(np.abs(np.linalg.eigvals(A)).max(), rel=1e-6)
    R = np.array([[0.0, -0.9], [0.9, 0.0]])
    assert spectral_radius(R) == pytest.approx(0.9, rel=1e-9)
    assert spectral_radius(np.zeros((0, 0))) == 0.0
    assert spectral_radius(np.zeros((3, 3))) == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_lyapunov_series_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 10))
    B = rng.standard_normal((d, d))
    B *= 0.9 / np.abs(np.linalg.eigvals(B)).max()
    H = lyapunov_series(B)
    ref = scipy.linalg.solve_discrete_lyapunov(B.T, np.eye(d))
    assert np.abs(H - ref).max() <= 1e-8 * max(1.0, np.abs(ref).max())


def test_lyapunov_series_diverges():
    with pytest.raises(ConvergenceError):
        lyapunov_series(np.array([[1.0]]), max_terms=64)


def test_swap2_diagnostics(swap2_chain):
    d = quotient_diagnostics(swap2_chain, exact_gauge(swap2_chain))
    assert d.rho_q == 0.0 and d.h_abs == 0.0 and d.free_states == ()


def test_abs4_diagnostics(abs4_chain):
    g = exact_gauge(abs4_chain)
    d = quotient_diagnostics(abs4_chain, g)
    assert d.rho_q == pytest.approx(np.sqrt(0.35), rel=1e-9)
    assert d.rho_q < 1 and d.lyapunov_residual <= 1e-10
    # Expected hitting times of {0, 1}: x2 = 1 + 0.5 x3, x3 = 1 + 0.7 x2.
    x = np.linalg.solve(np.array([[1, -0.5], [-0.7, 1]]), np.ones(2))
    assert d.h_abs == pytest.approx(x.max(), rel=1e-12)
    assert np.allclose(absorption_times(abs4_chain, g.structure), x)


def test_abs4_hitting_time_monte_carlo(abs4_chain):
    rng = Sampler(5).stream()
    g = exact_gauge(abs4_chain)
    episodes = 20_000
    pos = np.full(episodes, 2)
    steps = np.zeros(episodes)
    active = np.arange(episodes)
    while active.size:
        pos[active] = abs4_chain.table.successors(pos[active], rng.random(active.size))
        steps[active] += 1
        active = active[pos[active] >= 2]
    exact = absorption_times(abs4_chain, g.structure)[0]
    assert abs(steps.mean() - exact) <= 3 * steps.std(ddof=1) / np.sqrt(episodes)


def test_suite_contracts():
    for spec in suite():
        mrp, stc = build_mrp(spec.scaled(5))
        d = quotient_diagnostics(mrp, GaugeMap(exact_weights(mrp.P, stc)))
        assert d.rho_q < 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_quotient_contraction_random(seed):
    rng = np.random.default_rng(seed)
    mrp, _, _ = random_chain(rng)
    g = exact_gauge(mrp)
    d = quotient_diagnostics(mrp, g)
    free = list(d.free_states)
    A = (g.matrix() @ mrp.P)[np.ix_(free, free)]
    ref = np.abs(np.linalg.eigvals(A)).max() if free else 0.0
    # Defective zero eigenvalues are only resolved to about sqrt(machine eps).
    assert d.rho_q == pytest.approx(ref, rel=1e-6, abs=1e-6)
    assert d.rho_q < 1
    for _ in range(20):
        w = g(rng.standard_normal(mrp.n))
        assert d.seminorm(g, g(mrp.P @ w)) <= d.gamma * d.seminorm(g, w) + 1e-9


def test_diagnostics_fault_on_wrong_gauge(swap2_chain):
    # Anchoring SWAP2 at a single state leaves the -1 eigenvalue in play.
    stc = ChainStructure(n=2, classes=((0, 1),), transient=(), periods=(1,), cyclic=(((0, 1),),))
    g = GaugeMap(PhaseWeights(stc, np.ones((2, 1))))
    with pytest.raises(ConvergenceError):
        quotient_diagnostics(swap2_chain, g)


def test_return_identity_examples(abs4_chain):
    sol = exact_solve(abs4_chain, exact_gauge(abs4_chain))
    assert return_identity_check(abs4_chain, np.zeros(4), 30, 2) == 0.0
    assert return_identity_check(abs4_chain, sol.v_star, 50, 2) <= 1e-10


def test_return_identity_random():
    rng = np.random.default_rng(8)
    for _ in range(100):
        mrp, _, _ = random_chain(rng)
        v = rng.standard_normal(mrp.n) * 5
        T = int(rng.integers(1, 40))
        assert return_identity_check(mrp, v, T, int(rng.integers(0, mrp.n))) <= 1e-8


def test_transient_cost_examples(abs4_chain, swap2_chain):
    sol = exact_solve(swap2_chain, exact_gauge(swap2_chain))
    assert transient_cost_check(swap2_chain, sol, (0, 1), 100, Sampler(0)) == []
    g = exact_gauge(abs4_chain)
    sol = exact_solve(abs4_chain, g)
    rows = transient_cost_check(abs4_chain, sol, g.anchors, 20_000, Sampler(0), states=[0, 2])
    assert [r.state for r in rows] == [2]
    assert abs(rows[0].estimate - (-270 / 169)) <= 3 * rows[0].std_error and not rows[0].flagged
