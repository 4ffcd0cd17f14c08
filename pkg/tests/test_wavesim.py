import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bcmtor.errors import GridMismatchError, InstabilityError
from bcmtor.wavesim import (Potential, SimGrid, TimeSignal, WaveField, assemble_control_operator,
                            assemble_response, constant_potential, discrete_energy,
                            flux_trace, neumann_trace, solve_wave, tabulated_potential,
                            zero_potential)

from conftest import rel_l2


def sin2(T):
    return lambda t: np.sin(np.pi * t / T) ** 2


# --- grid -------------------------------------------------------------------

def test_grid_steps():
    g = SimGrid(1.0, 0.45, 400)
    assert g.dt == g.h == 1 / 400
    assert g.n_t == 180
    assert g.steps(0.9) == 360


@pytest.mark.parametrize("args", [(1.0, 0.45, 8), (1.0, 1.0, 400), (1.0, 0.02, 400)])
def test_grid_rejects_bad_shapes(args):
    with pytest.raises(ValueError):
        SimGrid(*args)


def test_grid_rejects_incommensurate_horizon():
    with pytest.raises(GridMismatchError):
        SimGrid(1.0, 0.4512, 400)
    with pytest.raises(GridMismatchError):
        SimGrid(1.0, 0.45, 400).steps(0.1234)


# --- solver -----------------------------------------------------------------

def dalembert(f, g):
    """Sampled u(x, t) = f(t - x) for t >= x, else 0."""
    t = np.arange(g.n_t + 1)[:, None] * g.dt
    s = t - g.x[None, :]
    return np.where(s >= 0, f(np.clip(s, 0, None)), 0.0)


def test_magic_step_transport_is_exact(grid):
    f = sin2(grid.horizon)
    u = solve_wave(zero_potential(grid), TimeSignal.from_function(f, grid, grid.horizon), grid)
    exact = dalembert(f, grid)
    assert np.max(np.abs(u.u - exact)) <= 1e-12 * np.max(np.abs(exact))
    k = grid.n_t
    np.testing.assert_allclose(u.final[:k], f(grid.horizon - grid.x[:k]), atol=1e-13)
    assert np.all(u.final[k:] == 0.0)


def test_zero_control_gives_zero_field(grid, fixture_q):
    f = TimeSignal(np.zeros(grid.n_t + 1), grid.dt)
    assert not np.any(solve_wave(fixture_q, f, grid).u)


def test_constant_potential_matches_reference(frozen):
    """Oracle: method of lines at 20x resolution (tests/oracles)."""
    g = SimGrid(1.0, 0.5, 200)
    u = solve_wave(constant_potential(g, 1.0), TimeSignal.from_function(lambda t: t**2, g, 0.5), g)
    ref = np.array(frozen["q1_t2_snapshot"]["u"])
    assert rel_l2(u.final[:101], ref) <= 1e-3


def test_constant_potential_matches_refined_grid():
    def run(n):
        g = SimGrid(1.0, 0.5, n)
        return solve_wave(constant_potential(g, 1.0),
                          TimeSignal.from_function(lambda t: t**2, g, 0.5), g).final
    coarse, fine = run(200), run(1600)
    assert rel_l2(coarse, fine[::8]) <= 1e-3


def test_solver_is_deterministic(grid, fixture_q):
    f = TimeSignal.from_function(sin2(grid.horizon), grid, grid.horizon)
    a = solve_wave(fixture_q, f, grid).u
    b = solve_wave(fixture_q, f, grid).u
    assert np.array_equal(a, b)


def test_instability_names_step():
    g = SimGrid(1.0, 0.45, 100)
    q = constant_potential(g, 1e12)
    f = TimeSignal.from_function(sin2(0.45), g, 0.45)
    with pytest.raises(InstabilityError) as info:
        solve_wave(q, f, g)
    assert 1 < info.value.step <= g.n_t


def test_control_validation(grid):
    with pytest.raises(GridMismatchError):
        solve_wave(zero_potential(grid), TimeSignal(np.zeros(10), grid.dt), grid, grid.horizon)
    with pytest.raises(GridMismatchError):
        solve_wave(zero_potential(grid), TimeSignal(np.zeros(grid.n_t + 1), grid.dt), grid, 0.3333)
    bad = TimeSignal(np.ones(grid.n_t + 1), grid.dt)
    with pytest.raises(ValueError):
        solve_wave(zero_potential(grid), bad, grid)


small_grid = SimGrid(1.0, 0.25, 64)
vec = arrays(float, small_grid.n_t, elements=st.floats(-1, 1, allow_nan=False))
qvec = arrays(float, small_grid.n_x + 1, elements=st.floats(-3, 9, allow_nan=False))


@settings(max_examples=40, deadline=None)
@given(qvec, vec)
def test_causality_cone(qv, coords):
    g = small_grid
    u = solve_wave(Potential(qv, g), TimeSignal.from_controls(coords, g.dt), g).u
    t = np.arange(u.shape[0])[:, None] * g.dt
    outside = t < g.x[None, :] - 1e-12
    assert np.all(u[outside] == 0.0)


@settings(max_examples=40, deadline=None)
@given(qvec, vec, vec, st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(qv, a, b, alpha, beta):
    g = small_grid
    q = Potential(qv, g)
    ua = solve_wave(q, TimeSignal.from_controls(a, g.dt), g).u
    ub = solve_wave(q, TimeSignal.from_controls(b, g.dt), g).u
    uab = solve_wave(q, TimeSignal.from_controls(alpha * a + beta * b, g.dt), g).u
    scale = 1 + np.max(np.abs(ua)) + np.max(np.abs(ub))
    assert np.max(np.abs(uab - alpha * ua - beta * ub)) <= 1e-12 * scale * 4


@settings(max_examples=20, deadline=None)
@given(arrays(float, small_grid.n_x + 1, elements=st.floats(0, 9, allow_nan=False)),
       arrays(float, small_grid.n_t // 2, elements=st.floats(-1, 1, allow_nan=False)))
def test_energy_bounded_for_nonnegative_q(qv, half):
    g = small_grid
    coords = np.concatenate([half, np.zeros(g.n_t - half.size)])
    f = TimeSignal.from_controls(coords, g.dt)
    u = solve_wave(Potential(qv, g), f, g)
    e = discrete_energy(u, Potential(qv, g), u.u.shape[0] - 2)
    df = np.diff(f.samples) / g.dt
    h1 = g.dt * (np.sum(f.samples**2) + np.sum(df**2))
    assert np.isfinite(e)
    assert e <= 2.0 * h1 + 1e-300


# --- traces -----------------------------------------------------------------

def test_neumann_trace_of_free_wave_is_derivative(grid):
    T = grid.horizon
    f = TimeSignal.from_function(sin2(T), grid, T)
    tr = neumann_trace(solve_wave(zero_potential(grid), f, grid)).samples
    deriv = np.pi / T * np.sin(2 * np.pi * f.t / T)
    # the one-sided stencil reaches back two samples; skip the start-up steps
    err = np.max(np.abs(tr[2:] - deriv[2:]))
    assert err <= 20 * grid.h**2 * (np.pi / T) ** 3


def test_zero_control_gives_zero_trace(grid, fixture_q):
    f = TimeSignal(np.zeros(grid.n_t + 1), grid.dt)
    u = solve_wave(fixture_q, f, grid)
    assert not np.any(neumann_trace(u).samples)
    assert not np.any(flux_trace(u).samples)


def test_neumann_trace_matches_reference(grid, fixture_q, frozen):
    """Oracle: method-of-lines trace at 10x resolution (tests/oracles)."""
    f = TimeSignal.from_function(sin2(grid.horizon), grid, grid.horizon)
    tr = neumann_trace(solve_wave(fixture_q, f, grid)).samples[::2]
    assert rel_l2(tr, np.array(frozen["fixture_sin2_trace"]["trace"])) <= 5e-3


def test_neumann_trace_matches_refined_grid(fixture_q):
    q = lambda x: 2 - 1.5 * np.exp(-20 * (x - 0.4) ** 2)  # noqa: E731

    def trace(n):
        g = SimGrid(1.0, 0.45, n)
        f = TimeSignal.from_function(sin2(0.45), g, 0.45)
        return neumann_trace(solve_wave(Potential.from_function(q, g), f, g)).samples

    assert rel_l2(trace(400), trace(3200)[::8]) <= 5e-3


def test_neumann_trace_converges_at_second_order():
    q = lambda x: 1 + np.cos(3 * x)  # noqa: E731
    f = lambda t: np.sin(np.pi * t / 0.45) ** 4  # noqa: E731

    def trace(n):
        g = SimGrid(1.0, 0.45, n)
        s = TimeSignal.from_function(f, g, 0.45)
        return neumann_trace(solve_wave(Potential.from_function(q, g), s, g)).samples

    t1, t2, t3 = trace(100), trace(200), trace(400)
    e1 = np.max(np.abs(t1 - t2[::2]))
    e2 = np.max(np.abs(t2[::2] - t3[::4]))
    assert 1.7 <= np.log2(e1 / e2) <= 2.3


def test_trace_needs_three_cells(grid):
    with pytest.raises(ValueError):
        neumann_trace(WaveField(np.zeros((5, 2)), grid))


# --- operators --------------------------------------------------------------

def test_free_response_differentiates(grid):
    t = np.arange(1, 2 * grid.n_t + 1) * grid.dt
    for stencil in ("flux", "second_order"):
        R = assemble_response(zero_potential(grid), grid, stencil=stencil)
        assert rel_l2(R(t**2), 2 * t) <= 1e-2


def test_response_zero_column(fixture_case):
    assert not np.any(fixture_case.R(np.zeros(fixture_case.R.shape[1])))


@pytest.mark.parametrize("stencil,trace", [("second_order", neumann_trace), ("flux", flux_trace)])
def test_response_matches_direct_application(grid, fixture_q, stencil, trace):
    T2 = 2 * grid.horizon
    f = TimeSignal.from_function(lambda t: np.sin(np.pi * t / T2) ** 2, grid, T2)
    R = assemble_response(fixture_q, grid, stencil=stencil)
    direct = trace(solve_wave(fixture_q, f, grid)).samples[1:]
    assert np.max(np.abs(R(f.controls) - direct)) <= 1e-12 * np.max(np.abs(direct))


def test_response_columns_are_independent_lanes(grid, fixture_q, fixture_case):
    """Batch assembly equals single-column solves bit for bit."""
    n = 2 * grid.n_t
    for j in (0, 57, n - 1):
        e = np.zeros(n)
        e[j] = 1.0
        tr = flux_trace(solve_wave(fixture_q, TimeSignal.from_controls(e, grid.dt), grid))
        assert np.array_equal(tr.samples[1:], fixture_case.R.matrix[:, j])


def test_response_needs_far_end(fixture_q):
    g = SimGrid(1.0, 0.5, 400)
    with pytest.raises(GridMismatchError):
        assemble_response(Potential.from_function(lambda x: 0 * x, g), g)


def test_free_control_operator_is_reversal(zero_case):
    W = zero_case.W.matrix
    assert np.array_equal(W, np.eye(W.shape[0])[::-1])
    assert zero_case.W.oracle
    assert not np.any(zero_case.W(np.zeros(W.shape[1])))


def test_control_operator_causality(fixture_case, grid):
    W = fixture_case.W.matrix
    x = np.arange(grid.n_t) * grid.h
    for j in range(grid.n_t):
        t_prev = j * grid.dt  # hat at t_{j+1} starts at t_j
        outside = x > grid.horizon - t_prev + 1e-12
        assert np.all(W[outside, j] == 0.0)


def test_potential_helpers(grid):
    q = tabulated_potential(grid, [0.0, 0.5, 1.0], [1.0, 3.0, 1.0])
    assert q.values[200] == pytest.approx(3.0)
    assert np.isfinite(q.smoothness_proxy)
    with pytest.raises(ValueError):
        tabulated_potential(grid, [0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        Potential(np.full(grid.n_x + 1, np.nan), grid)
