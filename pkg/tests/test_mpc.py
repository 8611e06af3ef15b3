import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contour_mpc.contour import Line
from contour_mpc.invariance import ModeGraph, ModeModel, SwitchCiFamily, switch_ci_sets
from contour_mpc.mpc import (
    DwellState,
    MpcConfig,
    MpcError,
    MpcInfeasible,
    SteadyTarget,
    control_loop,
    mpc_step,
    solve_mpc,
    stage_sets,
    steady_target,
    synthesize_terminal,
    update_dwell,
)
from contour_mpc.numsolve import Status, dlqr, dlyap
from contour_mpc.polytope import Polytope, contains_point, sample_uniform


def interval(lo, hi):
    return Polytope.from_box([lo], [hi])


def two_axis(mode_id=1, S=None, h=0.1):
    """Two decoupled double integrators, state (x, vx, y, vy), output (x, y)."""
    a = np.array([[1.0, h], [0.0, 1.0]])
    b = np.array([[0.5 * h * h], [h]])
    A = np.kron(np.eye(2), a)
    B = np.kron(np.eye(2), b)
    C = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
    return ModeModel(mode_id, A, B, C, S=S)


X4 = Polytope.from_box([-1, -0.5, -1, -0.5], [1, 0.5, 1, 0.5])
U2 = Polytope.from_box([-1, -1], [1, 1])


def cfg4(N=3, **kw):
    return MpcConfig(N, np.eye(2) * 10, np.eye(2) * 0.1, U2, X4, **kw)


@pytest.fixture(scope="module")
def axis_setup():
    model = two_axis(1, X4)
    graph = ModeGraph([1], [(1, 1)], {1: 1})
    cfg = cfg4()
    fam = switch_ci_sets([model], graph, U2)
    term = synthesize_terminal([model], graph, cfg)
    return model, graph, cfg, fam, term


# --- configuration ------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(0, np.eye(2), np.eye(2), U2)
    with pytest.raises(ValueError):
        MpcConfig(3, -np.eye(2), np.eye(2), U2)
    with pytest.raises(ValueError):
        MpcConfig(3, np.eye(2), np.eye(3), U2)
    np.testing.assert_array_equal(cfg4().Q_s, np.eye(2))


# --- steady target --------------------------------------------------------------

def test_target_interior_reference():
    t = steady_target([0.3, -0.2], two_axis(), cfg4())
    np.testing.assert_allclose(t.y_s, [0.3, -0.2], atol=1e-9)
    np.testing.assert_allclose(t.u_s, 0.0, atol=1e-9)
    np.testing.assert_allclose(t.x_s, two_axis().A @ t.x_s + two_axis().B @ t.u_s, atol=1e-9)


def test_target_outside_box_is_projection():
    t = steady_target([1.7, -0.4], two_axis(), cfg4())
    np.testing.assert_allclose(t.y_s, [1.0, -0.4], atol=1e-8)


def test_target_no_equilibrium():
    model = ModeModel(1, [[0.5]], [[1.0]], [[1.0]])
    cfg = MpcConfig(1, np.eye(1), np.eye(1), interval(-0.1, 0.1), interval(5, 6))
    with pytest.raises(MpcError):
        steady_target([5.5], model, cfg)


def test_target_identity_on_admissible_references():
    rng = np.random.default_rng(0)
    model, cfg = two_axis(), cfg4()
    worst = 0.0
    for r in rng.uniform(-1, 1, size=(1000, 2)):
        worst = max(worst, np.linalg.norm(steady_target(r, model, cfg).y_s - r))
    assert worst <= 1e-8


# --- terminal ingredients -------------------------------------------------------

def test_terminal_single_mode_binding():
    model = ModeModel(1, [[0.5]], [[1.0]], [[1.0]])
    cfg = MpcConfig(1, np.eye(1), np.eye(1), interval(-1, 1))
    term = synthesize_terminal([model], ModeGraph([1], [(1, 1)], {1: 1}), cfg)
    # scalar closed forms: Riccati fixed point, then the Lyapunov series
    p = 1.0
    for _ in range(200):
        p = 0.25 * p - (0.5 * p) ** 2 / (1 + p) + 1
    k = -0.5 * p / (1 + p)
    acl = 0.5 + k
    P = (1 + k * k) / (1 - acl * acl)
    assert term.K[1][0, 0] == pytest.approx(k, abs=1e-12)
    assert term.P[1][0, 0] == pytest.approx(P, abs=1e-12)
    assert abs(term.certificate[(1, 1)]) <= 1e-9
    assert term.min_certificate() >= -1e-8


def test_terminal_scaling_engages():
    # mode 2 sees the state through C = 10, so its P is 100x mode 1's
    m1 = ModeModel(1, [[0.5]], [[1.0]], [[1.0]])
    m2 = ModeModel(2, [[0.5]], [[1.0]], [[10.0]])
    cfg = MpcConfig(1, np.eye(1), np.eye(1), interval(-1, 1))
    graph = ModeGraph([1, 2], [(1, 2)], {1: 1, 2: 1})
    term = synthesize_terminal([m1, m2], graph, cfg)
    assert term.scale[1] > 1.0 and term.scale[2] == 1.0
    assert term.min_certificate() >= -1e-8
    assert set(term.certificate) == {(1, 1), (1, 2), (2, 2)}


def test_terminal_unsatisfiable():
    # C = 0 gives a zero terminal weight that no scale can lift above mode 2's
    m1 = ModeModel(1, [[0.5]], [[1.0]], [[0.0]])
    m2 = ModeModel(2, [[0.5]], [[1.0]], [[1.0]])
    cfg = MpcConfig(1, np.eye(1), np.eye(1), interval(-1, 1))
    with pytest.raises(MpcError, match="unsatisfiable"):
        synthesize_terminal([m1, m2], ModeGraph([1, 2], [(1, 2)], {1: 1, 2: 1}), cfg)


def test_terminal_matches_dlqr_dlyap(axis_setup):
    model, _, cfg, _, term = axis_setup
    Qx = model.C.T @ cfg.Q @ model.C
    K, _ = dlqr(model.A, model.B, Qx, cfg.R)
    P = dlyap(model.A + model.B @ K, Qx + K.T @ cfg.R @ K)
    np.testing.assert_allclose(term.K[1], K, atol=1e-10)
    np.testing.assert_allclose(term.P[1], P, rtol=1e-9)


# --- dwell bookkeeping --------------------------------------------------------

GRAPH = ModeGraph(["a", "b"], [("a", "b")], {"a": 2, "b": 5})


def test_dwell_countdown():
    assert update_dwell(DwellState("a", "b", 3), "a", GRAPH).delta == 2
    assert update_dwell(DwellState("a", "b", 0), "a", GRAPH).delta == 0


def test_dwell_switch_resets():
    ds = update_dwell(DwellState("a", "b", 0), "b", GRAPH)
    assert (ds.sigma, ds.delta) == ("b", 5)


def test_dwell_errors():
    with pytest.raises(MpcError, match="dwell violation"):
        update_dwell(DwellState("a", "b", 1), "b", GRAPH)
    with pytest.raises(MpcError, match="not an edge"):
        update_dwell(DwellState("b", None, 0), "a", GRAPH)


def test_stage_sets_without_ladder():
    S, C = Polytope.from_box([-2], [2]), Polytope.from_box([-1], [1])
    fam = SwitchCiFamily({1: C}, 1, True)
    sets = stage_sets(DwellState(1, None, 2), fam, 4, S)
    assert sets == [S, S, C, C]
    with pytest.raises(MpcError):
        stage_sets(DwellState(1, None, 2), fam, 4)


# --- single MPC step ----------------------------------------------------------

def test_step_at_target_is_zero_cost(axis_setup):
    model, _, cfg, fam, term = axis_setup
    t = steady_target([0.2, -0.1], model, cfg)
    res = mpc_step(t.x_s, DwellState(1, None, 0), t, fam, None, {1: model}, cfg, term)
    np.testing.assert_allclose(res.u0, t.u_s, atol=1e-9)
    assert abs(res.cost) <= 1e-12
    assert res.status is Status.OPTIMAL


def test_step_n1_matches_grid_search():
    a, q, r_w = 1.2, 1.0, 0.1
    model = ModeModel(1, [[a]], [[1.0]], [[1.0]])
    U = interval(-1, 1)
    cfg = MpcConfig(1, np.eye(1) * q, np.eye(1) * r_w, U, interval(-3, 3))
    C_set = interval(-2, 2)
    P = np.array([[2.5]])
    target = SteadyTarget(np.array([0.3]), np.array([-0.06]), np.array([0.3]))
    x0 = np.array([1.7])
    res = solve_mpc(x0, target, model, cfg, P, [C_set])
    u = np.linspace(-1, 1, 1_000_001)
    x1 = a * x0[0] + u
    J = q * (x0[0] - 0.3) ** 2 + r_w * (u + 0.06) ** 2 + P[0, 0] * (x1 - 0.3) ** 2
    J[np.abs(x1) > 2] = np.inf
    assert res.cost == pytest.approx(J.min(), abs=1e-3)
    assert res.u0[0] == pytest.approx(u[np.argmin(J)], abs=1e-3)


def test_step_infeasible_carries_time_index(axis_setup):
    model, _, cfg, fam, term = axis_setup
    t = steady_target([0.0, 0.0], model, cfg)
    with pytest.raises(MpcInfeasible) as info:
        mpc_step(np.array([3.0, 2.0, 0, 0]), DwellState(1, None, 0), t, fam, None,
                 {1: model}, cfg, term, k=17)
    assert info.value.k == 17


# --- closed loop --------------------------------------------------------------

def test_loop_single_point_at_equilibrium(axis_setup):
    model, graph, cfg, fam, term = axis_setup
    r = np.array([0.1, 0.2])
    t = steady_target(r, model, cfg)
    line = Line.through((0.0, 0.2), (0.5, 0.2))
    tr = control_loop(t.x_s, [r], [1], {1: model}, graph, fam, term, cfg, contour=[line])
    # records stay constant until the initial dwell has run out
    assert 1 <= len(tr) <= 1 + graph.dwell[1]
    np.testing.assert_allclose(tr.eps, 0.0, atol=1e-12)
    np.testing.assert_allclose(tr.u, np.tile(t.u_s, (len(tr), 1)), atol=1e-9)
    np.testing.assert_allclose(tr.x, np.tile(t.x_s, (len(tr), 1)), atol=1e-12)


def test_loop_terminal_convergence(axis_setup):
    model, graph, cfg, fam, term = axis_setup
    x0 = np.array([-0.6, 0.2, 0.5, -0.1])
    assert contains_point(fam[1], x0)
    r = np.array([0.4, -0.3])
    tr = control_loop(x0, [r], [1], {1: model}, graph, fam, term, cfg, conv_tol=1e-6)
    assert np.linalg.norm(model.C @ (model.A @ tr.x[-1] + model.B @ tr.u[-1]) - r) <= 1e-6
    assert np.all(np.diff(tr.cost) <= 1e-6)


def test_loop_lyapunov_decrease_near_target(axis_setup):
    # with inactive constraints the shifted LQR tail is admissible, so
    # J(k+1) - J(k) <= -|y(k) - y_s|_Q^2 holds step by step
    model, graph, cfg, fam, term = axis_setup
    r = np.array([0.4, -0.3])
    tr = control_loop(np.array([0.3, 0.0, -0.2, 0.05]), [r], [1], {1: model}, graph, fam,
                      term, cfg, conv_tol=1e-6)
    stage = np.einsum("ij,jk,ik->i", tr.y - r, cfg.Q, tr.y - r)
    assert np.all(np.diff(tr.cost) <= -stage[:-1] + 1e-6)


def two_mode_problem():
    """Two regions of one axis pair with different sampling gains on x."""
    S1 = Polytope.from_box([-1, -0.5, -1, -0.5], [0.2, 0.5, 1, 0.5])
    S2 = Polytope.from_box([-0.2, -0.5, -1, -0.5], [1, 0.5, 1, 0.5])
    m1, m2 = two_axis(1, S1, h=0.1), two_axis(2, S2, h=0.12)
    graph = ModeGraph([1, 2], [(1, 2), (2, 1), (1, 1), (2, 2)], {1: 3, 2: 4})
    fam = switch_ci_sets([m1, m2], graph, U2)
    cfg = cfg4()
    term = synthesize_terminal([m1, m2], graph, cfg)
    return {1: m1, 2: m2}, graph, fam, cfg, term


@pytest.fixture(scope="module")
def two_modes():
    return two_mode_problem()


def test_two_mode_terminal_certificate(two_modes):
    _, _, _, _, term = two_modes
    assert term.min_certificate() >= -1e-8
    assert len(term.certificate) == 4


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_recursive_feasibility_random_switching(two_modes, seed):
    models, graph, fam, cfg, term = two_modes
    rng = np.random.default_rng(seed)
    sigma = int(rng.integers(1, 3))
    x = sample_uniform(fam[sigma], 1, seed=seed)[0]
    ds = DwellState(sigma, 3 - sigma, 0)
    r = rng.uniform(-0.8, 0.8, 2)
    for k in range(200):
        if ds.delta == 0 and rng.random() < 0.1:
            ds = update_dwell(ds, 3 - ds.sigma, graph, ds.sigma)
        elif k:
            ds = update_dwell(ds, ds.sigma, graph)
        if rng.random() < 0.05:
            r = rng.uniform(-0.8, 0.8, 2)
        model = models[ds.sigma]
        t = steady_target(r, model, cfg)
        sets = stage_sets(ds, fam, cfg.N)
        res = mpc_step(x, ds, t, fam, None, models, cfg, term, k)
        x = model.A @ x + model.B @ res.u0
        # one-step constraint transfer
        assert contains_point(sets[0], x, 1e-7)
