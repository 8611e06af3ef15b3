import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contour_mpc.contour import (
    Arc,
    ContourError,
    Line,
    Tolerance,
    active_sector,
    circular_feasible_sectors,
    contouring_error,
    linear_feasible_set,
    parse_annulus,
    polygon_side_counts,
    sector_of_angle,
)
from contour_mpc.polytope import Polytope, contains_points, equal, sample_uniform


# --- contouring error -------------------------------------------------------

def test_error_on_circle():
    assert contouring_error((0.08, 0.0), [Arc(0, 0, 0.08)]) == pytest.approx(0.0, abs=1e-15)


def test_error_radial_offset():
    assert contouring_error((0.09, 0.0), [Arc(0, 0, 0.08)]) == pytest.approx(0.01, abs=1e-15)


def test_error_line():
    assert contouring_error((1, 1), [Line(3, 4, 0)]) == pytest.approx(1.4, abs=1e-15)


def test_error_arc_uses_nearer_endpoint_outside_window():
    arc = Arc(0, 0, 1.0, 0.0, math.pi / 2)
    # angle -90 deg is outside the quarter arc; nearest endpoint is (1, 0)
    assert contouring_error((0, -1), [arc]) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_error_minimum_over_segments():
    contour = [Line(1, 0, 0), Arc(5, 0, 1.0)]
    assert contouring_error((4.5, 0), [contour[0]]) == pytest.approx(4.5)
    assert contouring_error((4.5, 0), contour) == pytest.approx(0.5)


def test_error_empty_contour():
    with pytest.raises(ContourError):
        contouring_error((0, 0), [])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_error_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2, 2, size=(20, 2))
    a0, a1 = sorted(rng.uniform(-3, 3, 2))
    arc = Arc(0.0, 0.0, rng.uniform(0.2, 1.5), a0, a1 + 0.1)
    n = rng.normal(size=2)
    line = Line(n[0], n[1], rng.normal())
    phi = rng.uniform(-math.pi, math.pi)
    Rm = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    arc_r = Arc(0.0, 0.0, arc.R_c, a0 + phi, a1 + 0.1 + phi)
    nr = Rm @ n
    line_r = Line(nr[0], nr[1], line.c)
    for p in pts:
        q = Rm @ p
        assert contouring_error(q, [arc_r]) == pytest.approx(contouring_error(p, [arc]), abs=1e-10)
        assert contouring_error(q, [line_r]) == pytest.approx(contouring_error(p, [line]), abs=1e-10)


# --- linear feasible set ----------------------------------------------------

def test_linear_set_slab():
    X = Polytope.from_box([-1, -1], [1, 1])
    S = linear_feasible_set(Line(1, 0, 0), Tolerance(0.004), X, np.eye(2))
    assert equal(S, Polytope.from_box([-0.004, -1], [0.004, 1]))


def test_linear_set_diagonal():
    S = linear_feasible_set(Line(1, 1, 0), Tolerance(1.0))
    expect = Polytope([[1, 1], [-1, -1]], [math.sqrt(2), math.sqrt(2)])
    assert equal(S, expect)


def test_linear_set_zero_normal():
    with pytest.raises(ContourError):
        Line(0, 0, 1)


def test_linear_set_sampling_sound():
    line = Line(0.3, -0.7, 0.05)
    tol = Tolerance(0.004)
    # state (x_e, v_x, y_e, v_y); output picks positions
    C = np.array([[1, 0, 0, 0], [0, 0, 1, 0]], dtype=float)
    X = Polytope.from_box([-0.2] * 4, [0.2] * 4)
    S = linear_feasible_set(line, tol, X, C)
    pts = sample_uniform(S, 10_000, seed=1) @ C.T
    err = np.array([contouring_error(p, [line]) for p in pts])
    assert err.max() <= tol.eps_c + 1e-12


def test_tolerance_positive():
    with pytest.raises(ContourError):
        Tolerance(0.0)


# --- side counts ------------------------------------------------------------

def test_side_counts_experiment_values():
    n_i, n_o = polygon_side_counts(0.08, Tolerance(0.004))
    assert n_i == 10
    assert n_o in (10, 11)
    # strict arithmetic: R_c exceeds l_s(10) by about 1.1e-4
    assert n_o == 11
    assert polygon_side_counts(0.08, Tolerance(0.004), slack=1.2e-4) == (10, 10)


def test_side_counts_tight_inner():
    assert polygon_side_counts(1.0, Tolerance(0.5)) == (3, 4)


def test_side_counts_preconditions():
    with pytest.raises(ContourError):
        polygon_side_counts(0.08, Tolerance(0.09))
    with pytest.raises(ContourError):
        Tolerance(-1e-3)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.005, 0.6))
def test_side_counts_match_brute_scan(R, frac):
    # brute oracle: scan side counts with the closed-form containment test
    eps = frac * R
    n_i, n_o = polygon_side_counts(R, Tolerance(eps))

    def ok_inner(n):
        return (R - eps) / math.cos(math.pi / n) <= R + 1e-9

    def circle_fits(ni, no):
        lv = (R - eps) / math.cos(math.pi / ni)
        ls = (R + eps) * math.cos(math.pi / no)
        return lv <= ls + 1e-9 and lv <= R + 1e-9 and R <= ls + 1e-9

    assert ok_inner(n_i) and (n_i == 3 or not ok_inner(n_i - 1))
    assert circle_fits(n_i, n_o)
    assert n_o == 3 or not circle_fits(n_i, n_o - 1)


# --- annulus sectors ----------------------------------------------------------

@pytest.fixture(scope="module")
def figure_annulus():
    return circular_feasible_sectors(Arc(0.0, 0.0, 1.0), Tolerance(0.3), 6, 8)


def test_annulus_fields(figure_annulus):
    ap = figure_annulus
    assert len(ap.sectors) == 6
    assert ap.l_v == pytest.approx(0.7 / math.cos(math.pi / 6), abs=1e-12)
    assert ap.l_s == pytest.approx(1.3 * math.cos(math.pi / 8), abs=1e-12)
    assert ap.l_v <= ap.l_s


def test_annulus_soundness(figure_annulus):
    ap = figure_annulus
    for p, s in enumerate(ap.sectors):
        pts = sample_uniform(s, 20_000, seed=p)
        r = np.linalg.norm(pts, axis=1)
        assert np.all(np.abs(r - ap.R_c) <= ap.eps_c + 1e-9)


def test_annulus_coverage(figure_annulus):
    ap = figure_annulus
    ang = np.linspace(0, 2 * math.pi, 720, endpoint=False)
    circle = np.c_[np.cos(ang), np.sin(ang)] * ap.R_c
    covered = np.zeros(720, dtype=bool)
    for s in ap.sectors:
        covered |= contains_points(s, circle)
    assert covered.all()


def test_annulus_interiors_disjoint(figure_annulus):
    ap = figure_annulus
    for p, s in enumerate(ap.sectors):
        pts = sample_uniform(s, 2000, seed=100 + p)
        hits = sum(contains_points(t, pts, -1e-9).astype(int) for t in ap.sectors)
        # boundary samples have measure zero; strict interiors land in one sector
        assert np.all(hits <= 1)


def test_experiment_annulus_soundness():
    ap = circular_feasible_sectors(Arc(0.1, -0.05, 0.08), Tolerance(0.004), 10, 11)
    ctr = np.array([0.1, -0.05])
    for p, s in enumerate(ap.sectors):
        pts = sample_uniform(s, 10_000, seed=p)
        r = np.linalg.norm(pts - ctr, axis=1)
        assert np.all(np.abs(r - 0.08) <= 0.004 + 1e-9)


def test_annulus_rejects_too_few_outer_sides():
    with pytest.raises(ContourError):
        circular_feasible_sectors(Arc(0.0, 0.0, 0.08), Tolerance(0.004), 10, 10)


def test_annulus_state_space_pullback():
    C = np.array([[1, 0, 0, 0], [0, 0, 1, 0]], dtype=float)
    X = Polytope.from_box([-2] * 4, [2] * 4)
    ap = circular_feasible_sectors(Arc(0.0, 0.0, 1.0), Tolerance(0.3), 6, 8, X=X, C=C)
    assert len(ap.state_sectors) == 6
    assert all(S.dim == 4 for S in ap.state_sectors)
    # a tiny state box misses every sector
    with pytest.raises(ContourError):
        circular_feasible_sectors(Arc(0.0, 0.0, 1.0), Tolerance(0.3), 6, 8,
                                  X=Polytope.from_box([-0.1] * 4, [0.1] * 4), C=C)


def test_annulus_text_roundtrip(figure_annulus):
    back = parse_annulus(figure_annulus.to_text().splitlines())
    assert (back.n_i, back.n_o) == (6, 8)
    for s, t in zip(figure_annulus.sectors, back.sectors):
        assert equal(s, t)


# --- active sector ----------------------------------------------------------

def test_active_sector_on_axis(figure_annulus):
    assert active_sector((1.0, 0.0), figure_annulus) == 1


def test_active_sector_tie_goes_low(figure_annulus):
    a = math.pi / 6  # ray between sectors 1 and 2
    assert active_sector((math.cos(a), math.sin(a)), figure_annulus) == 1
    assert sector_of_angle(a, figure_annulus) == 1


def test_active_sector_outside(figure_annulus):
    with pytest.raises(ContourError):
        active_sector((1.6, 0.0), figure_annulus)


def test_sector_of_angle_agrees_with_geometry(figure_annulus):
    for a in np.linspace(-math.pi, math.pi, 97):
        p = (math.cos(a), math.sin(a))
        assert sector_of_angle(a, figure_annulus) == active_sector(p, figure_annulus)
