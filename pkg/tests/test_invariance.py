import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contour_mpc.invariance import (
    InvarianceError,
    ModeGraph,
    ModeModel,
    SwitchCiFamily,
    backward_reachable,
    backward_reachable_k,
    brs_ladder,
    one_step_input,
    parse_family,
    switch_ci_sets,
    verify_family,
)
from contour_mpc.numsolve import LpProblem, Status, solve_lp
from contour_mpc.polytope import (
    Polytope,
    chebyshev_center,
    contains_points,
    contains_set,
    equal,
    is_empty,
    sample_uniform,
)


def interval(lo, hi):
    return Polytope.from_box([lo], [hi])


def scalar(a, mode_id=1, S=None):
    return ModeModel(mode_id, [[a]], [[1.0]], [[1.0]], S=S)


def double_integrator(mode_id, S):
    return ModeModel(mode_id, [[1.0, 1.0], [0.0, 1.0]], [[0.5], [1.0]], np.eye(2), S=S)


def reachable_in_k(model, S, I, U, x, k):
    """Oracle: LP over stacked inputs u_0..u_{k-1} keeping x_1..x_{k-1} in S, x_k in I."""
    n, m = model.B.shape
    rows, rhs = [], []
    for j in range(1, k + 1):
        # x_j = A^j x + sum_i A^{j-1-i} B u_i
        Aj = np.linalg.matrix_power(model.A, j)
        M = np.zeros((n, m * k))
        for i in range(j):
            M[:, i * m:(i + 1) * m] = np.linalg.matrix_power(model.A, j - 1 - i) @ model.B
        T = I if j == k else S
        rows.append(T.A @ M)
        rhs.append(T.b - T.A @ Aj @ x)
    for i in range(k):
        blk = np.zeros((U.b.size, m * k))
        blk[:, i * m:(i + 1) * m] = U.A
        rows.append(blk)
        rhs.append(U.b)
    res = solve_lp(LpProblem(np.zeros(m * k), np.vstack(rows), np.concatenate(rhs)))
    return res.status is Status.OPTIMAL


# --- backward reachable sets ------------------------------------------------

def test_brs_scalar_interval():
    B = backward_reachable(scalar(1.0), interval(-2, 2), interval(-1, 1), interval(-1, 1))
    assert equal(B, interval(-2, 2))


def test_brs_empty_target():
    B = backward_reachable(scalar(1.0), interval(-2, 2), Polytope.empty(1), interval(-1, 1))
    assert is_empty(B)


def test_brs_stay_put():
    model = ModeModel(1, np.eye(2), np.eye(2), np.eye(2))
    S = Polytope.from_box([-1, -1], [1, 1])
    assert equal(backward_reachable(model, S, S, Polytope.from_box([-3, -3], [3, 3])), S)


def test_brs_k_cases():
    model, U = scalar(1.0), interval(-1, 1)
    S, I = interval(-4, 4), interval(-1, 1)
    assert backward_reachable_k(model, S, I, U, 0) is I
    assert equal(backward_reachable_k(model, S, I, U, 1), backward_reachable(model, S, I, U))
    assert equal(backward_reachable_k(model, S, I, U, 2), interval(-3, 3))
    with pytest.raises(ValueError):
        backward_reachable_k(model, S, I, U, -1)


def test_brs_lifted_route_matches_box_route():
    # a rotated square input set forces the lifted projection path
    model = ModeModel(1, [[1.0, 0.2], [-0.1, 0.9]], np.eye(2), np.eye(2))
    S = Polytope.from_box([-3, -3], [3, 3])
    I = Polytope([[1, 2], [-1, 0.5], [0.3, -1], [-1, -1]], [1, 1, 1, 1])
    U_box = Polytope.from_box([-0.3, -0.2], [0.3, 0.2])
    U_poly = Polytope(np.vstack([U_box.A, [[1, 1]]]), np.concatenate([U_box.b, [10.0]]))
    assert equal(backward_reachable(model, S, I, U_box), backward_reachable(model, S, I, U_poly))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_brs_matches_pointwise_lp(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2)) * 0.7
    model = ModeModel(1, A, rng.normal(size=(2, 1)), np.eye(2), check=False)
    S = Polytope.from_box([-2, -2], [2, 2])
    I = Polytope(rng.normal(size=(6, 2)), rng.uniform(0.3, 1.0, 6))
    U = interval(-0.5, 0.5)
    B = backward_reachable(model, S, I, U)
    assert contains_set(S, B) or is_empty(B)
    X = rng.uniform(-2, 2, size=(300, 2))
    inside = contains_points(B, X, 0.0)
    for x, flag in zip(X, inside):
        # skip points within 1e-6 of the boundary
        if np.min(np.abs(x @ B.A.T - B.b), initial=1.0) < 1e-6:
            continue
        assert flag == (one_step_input(model, x, I, U) is not None)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_brs_monotone_in_target(seed):
    rng = np.random.default_rng(seed)
    model = ModeModel(1, rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), np.eye(2), check=False)
    S = Polytope.from_box([-2, -2], [2, 2])
    big = Polytope(rng.normal(size=(6, 2)), rng.uniform(0.5, 1.5, 6))
    small = big.scale(rng.uniform(0.2, 0.9))
    U = interval(-0.5, 0.5)
    Bs, Bb = backward_reachable(model, S, small, U), backward_reachable(model, S, big, U)
    assert is_empty(Bs) or contains_set(Bb, Bs)


def test_ladder_stops_at_repeat():
    levels = brs_ladder(scalar(1.0), interval(-2, 2), interval(-1, 1), interval(-1, 1), 10)
    assert len(levels) == 2
    assert equal(levels[1], interval(-2, 2))


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_k_step_brs_matches_stacked_lp(seed):
    rng = np.random.default_rng(seed)
    model = double_integrator(1, None)
    S = Polytope.from_box([-5, -2], [5, 2])
    I = Polytope.from_box([-0.5, -0.3], [0.5, 0.3])
    U = interval(-1, 1)
    k = 3
    Bk = backward_reachable_k(model, S, I, U, k)
    X = rng.uniform([-5, -2], [5, 2], size=(150, 2))
    for x in X:
        if np.min(np.abs(x @ Bk.A.T - Bk.b)) < 1e-6:
            continue
        assert contains_points(Bk, x[None], 0.0)[0] == reachable_in_k(model, S, I, U, x, k)


# --- switch CI families ------------------------------------------------------

def test_single_mode_already_invariant():
    S = interval(-1, 1)
    graph = ModeGraph([1], [], {1: 1})
    fam = switch_ci_sets([scalar(0.5, S=S)], graph, interval(-0.1, 0.1))
    assert equal(fam[1], S)
    assert fam.iterations_used == 1 and fam.converged


def test_scalar_stable_self_loop():
    S = interval(-1, 1)
    graph = ModeGraph([1], [(1, 1)], {1: 1})
    fam = switch_ci_sets([scalar(0.5, S=S)], graph, interval(-0.1, 0.1))
    assert equal(fam[1], S)


def test_unstable_scalar_shrinks_to_ci_interval():
    # x+ = 2x + u, |u| <= 0.1: largest CI set in [-1, 1] is [-0.1, 0.1]
    graph = ModeGraph([1], [], {1: 1})
    fam = switch_ci_sets([scalar(2.0, S=interval(-1, 1))], graph, interval(-0.1, 0.1))
    assert equal(fam[1], interval(-0.1, 0.1))


def test_identical_modes_match_single_mode():
    S = Polytope.from_box([-5, -2], [5, 2])
    U = interval(-0.5, 0.5)
    single = switch_ci_sets([double_integrator(1, S)], ModeGraph([1], [], {1: 1}), U)
    graph = ModeGraph([1, 2], [(1, 2), (2, 1), (1, 1), (2, 2)], {1: 1, 2: 1})
    pair = switch_ci_sets([double_integrator(1, S), double_integrator(2, S)], graph, U)
    assert equal(pair[1], single[1])
    assert equal(pair[2], single[1])


def test_jacobi_and_reverse_topological_agree():
    U = interval(-0.5, 0.5)
    S1 = Polytope.from_box([-5, -2], [5, 2])
    S2 = Polytope.from_box([-1, -2], [6, 2])
    models = [double_integrator(1, S1), double_integrator(2, S2)]
    graph = ModeGraph([1, 2], [(1, 2)], {1: 2, 2: 3})
    a = switch_ci_sets(models, graph, U, schedule="auto")
    b = switch_ci_sets(models, graph, U, schedule="jacobi")
    for m in (1, 2):
        assert equal(a[m], b[m])
    assert verify_family(a, models, graph, U, n_samples=200).ok


def test_chain_family_satisfies_definition_by_oracle():
    U = interval(-0.5, 0.5)
    S1 = Polytope.from_box([-5, -2], [5, 2])
    S2 = Polytope.from_box([2, -1], [8, 1])
    models = [double_integrator(1, S1), double_integrator(2, S2)]
    d2 = 4
    graph = ModeGraph([1, 2], [(1, 2)], {1: 1, 2: d2})
    fam = switch_ci_sets(models, graph, U)
    assert contains_set(S1, fam[1]) and contains_set(S2, fam[2])
    # every sampled point of C_1 can reach C_2 in d_2 steps inside S_2
    for x in sample_uniform(fam[1], 60, seed=3):
        assert reachable_in_k(models[1], S2, fam[2], U, x, d2) or \
            any(reachable_in_k(models[1], S2, fam[2], U, x, k) for k in range(d2))
    for m, model in zip((1, 2), models):
        for x in sample_uniform(fam[m], 60, seed=m):
            assert one_step_input(model, x, fam[m], U) is not None


def test_empty_iterate_names_mode():
    models = [scalar(2.0, 1, interval(-1, 1)), scalar(1.0, 2, interval(5, 6))]
    graph = ModeGraph([1, 2], [(1, 2)], {1: 1, 2: 1})
    with pytest.raises(InvarianceError, match="no switch CI family exists") as info:
        switch_ci_sets(models, graph, interval(-0.1, 0.1))
    assert info.value.mode == 1
    assert "successor 2" in info.value.term


def test_max_iter_exceeded():
    # x+ = 1.1x + u shrinks [-2, 2] geometrically toward [-1, 1]
    graph = ModeGraph([1], [], {1: 1})
    with pytest.raises(InvarianceError) as info:
        switch_ci_sets([scalar(1.1, S=interval(-2, 2))], graph, interval(-0.1, 0.1), max_iter=5)
    assert info.value.converged is False


def test_graph_validation():
    with pytest.raises(ValueError):
        ModeGraph([1], [(1, 2)], {1: 1})
    with pytest.raises(ValueError):
        ModeGraph([1], [], {1: 0})


def test_mode_model_rejects_unstabilizable():
    with pytest.raises(ValueError):
        ModeModel(1, np.diag([2.0, 0.5]), [[0.0], [1.0]], np.eye(2))


# --- verification -------------------------------------------------------------

def test_verify_trivial_family():
    S = interval(-1, 1)
    model = scalar(0.5, S=S)
    graph = ModeGraph([1], [], {1: 1})
    fam = switch_ci_sets([model], graph, interval(-0.1, 0.1))
    rep = verify_family(fam, [model], graph, interval(-0.1, 0.1), n_samples=100)
    assert rep.ok and rep.samples_checked == 100


def test_verify_flags_inflated_set():
    U = interval(-0.5, 0.5)
    S1 = Polytope.from_box([-5, -2], [5, 2])
    S2 = Polytope.from_box([2, -1], [8, 1])
    models = [double_integrator(1, S1), double_integrator(2, S2)]
    graph = ModeGraph([1, 2], [(1, 2)], {1: 1, 2: 2})
    fam = switch_ci_sets(models, graph, U)
    c, _ = chebyshev_center(fam[1])
    bad = SwitchCiFamily({1: fam[1].scale(1.1, c), 2: fam[2]}, fam.iterations_used, True)
    rep = verify_family(bad, models, graph, U, n_samples=50)
    assert not rep.ok
    v = rep.violations[0]
    assert v.mode == 1 and v.witness is not None
    # the witness really lies in the inflated set
    assert contains_points(bad[1], np.atleast_2d(v.witness), 1e-7)[0]


def test_verify_edge_inclusion_violation():
    # both sets invariant on their own, but C_1 cannot reach C_2 in d_2 steps
    U = interval(-0.5, 0.5)
    S1 = Polytope.from_box([-5, -2], [5, 2])
    S2 = Polytope.from_box([2, -1], [8, 1])
    models = [double_integrator(1, S1), double_integrator(2, S2)]
    graph = ModeGraph([1, 2], [(1, 2)], {1: 1, 2: 2})
    own = {m: switch_ci_sets([mm], ModeGraph([m], [], {m: 1}), U)[m]
           for m, mm in zip((1, 2), models)}
    rep = verify_family(SwitchCiFamily(own, 1, True), models, graph, U, n_samples=0)
    kinds = [v.kind for v in rep.violations]
    assert kinds == ["edge inclusion"]
    assert rep.violations[0].edge == (1, 2)
    assert rep.samples_checked == 0 and rep.edges_checked == 1


def test_family_text_roundtrip():
    S = Polytope.from_box([-5, -2], [5, 2])
    fam = switch_ci_sets([double_integrator(7, S)], ModeGraph([7], [], {7: 1}), interval(-0.5, 0.5))
    back = parse_family(fam.to_text().splitlines(), mode_type=int)
    assert back.converged and list(back.sets) == [7]
    assert equal(back[7], fam[7])
