"""A five-mode dual-drive gantry stand-in, its reference generator and the
closed-loop experiment assembly."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .contour import (Arc, ContourError, Line, Tolerance, circular_feasible_sectors,
                      polygon_side_counts, sector_of_angle)
from .invariance import (InvarianceError, ModeGraph, ModeModel, SwitchCiFamily,
                         switch_ci_sets)
from .mpc import (MpcConfig, MpcError, TerminalIngredients, Trace, control_loop,
                  synthesize_terminal)
from .polytope import Polytope, contains_point, intersect, is_empty

logger = logging.getLogger(__name__)

__all__ = [
    "GantryParams", "build_plant", "region_of", "generate_reference", "ReferencePlan",
    "CompositeMode", "Experiment", "ExperimentError", "build_experiment", "run_experiment",
    "default_path", "default_mpc_config", "Trace", "trace_to_csv", "CSV_HEADER",
]

# maps (u1, v, w) to (u1, u2, u3) with v = u2 + u3 and w = u3 - u2
INPUT_SPLIT = np.array([[1.0, 0.0, 0.0],
                        [0.0, 0.5, -0.5],
                        [0.0, 0.5, 0.5]])


@dataclass(frozen=True)
class GantryParams:
    """Plant constants and the state box used for set synthesis.

    Units are SI; inputs are drive currents in A.
    """

    T_s: float = 1 / 500
    x_travel: float = 0.125
    y_travel: float = 0.15
    boundaries: tuple = (-0.075, -0.025, 0.025, 0.075)
    xbar: tuple = (-0.1, -0.05, 0.0, 0.05, 0.1)
    omega_hz: tuple = (12.0, 15.0, 18.0, 15.0, 12.0)
    zeta: float = 0.05
    k1: float = 5.0
    k2: float = 2.5
    k3: float = 40.0
    u_max: float = 5.0
    # state box for the invariant-set computations
    v_max_state: float = 0.25
    theta_max: float = 1e-3
    theta_rate_max: float = 0.2
    # split input box |v| <= v_split, |w| <= w_split; needs v_split + w_split <= 2 u_max
    v_split: float = 6.0
    w_split: float = 4.0
    hysteresis: float = 0.002
    # extra (theta, theta') weight for designing the terminal ingredients
    terminal_theta_weight: tuple = (1e4, 0.1)

    def __post_init__(self):
        if not self.T_s > 0:
            raise ValueError("T_s must be positive")
        b = np.asarray(self.boundaries, dtype=float)
        if np.any(np.diff(b) <= 0) or b[0] <= -self.x_travel or b[-1] >= self.x_travel:
            raise ValueError("region boundaries must increase strictly inside the travel")
        n = b.size + 1
        if len(self.xbar) != n or len(self.omega_hz) != n:
            raise ValueError(f"need {n} linearization points and stiffness values")
        if min(self.omega_hz) <= 0:
            raise ValueError("omega must be positive")
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        if min(self.k1, self.k2, self.k3, self.u_max) <= 0:
            raise ValueError("gains and input bound must be positive")
        if self.v_split + self.w_split > 2 * self.u_max + 1e-12:
            raise ValueError("split input box does not fit inside the input box")
        if min(self.v_max_state, self.theta_max, self.theta_rate_max, self.hysteresis) <= 0:
            raise ValueError("state box and hysteresis must be positive")

    @property
    def n_regions(self) -> int:
        return len(self.boundaries) + 1

    def region_interval(self, j: int, extended: bool = False) -> tuple[float, float]:
        """Travel interval of region ``j`` (1-based)."""
        edges = [-self.x_travel, *self.boundaries, self.x_travel]
        lo, hi = edges[j - 1], edges[j]
        if extended:
            lo, hi = max(lo - self.hysteresis, -self.x_travel), min(hi + self.hysteresis, self.x_travel)
        return lo, hi

    def state_box(self) -> Polytope:
        v, t, w = self.v_max_state, self.theta_max, self.theta_rate_max
        return Polytope.from_box([-self.x_travel, -v, -self.y_travel, -v, -t, -w],
                                 [self.x_travel, v, self.y_travel, v, t, w])

    def input_box(self) -> Polytope:
        return Polytope.from_box([-self.u_max] * 3, [self.u_max] * 3)

    def split_input_box(self) -> Polytope:
        return Polytope.from_box([-self.u_max, -self.v_split, -self.w_split],
                                 [self.u_max, self.v_split, self.w_split])


def _zoh(Ac, Bc, T):
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n], M[:n, n:] = Ac, Bc
    E = scipy.linalg.expm(M * T)
    return E[:n, :n], E[:n, n:]


def continuous_model(p: GantryParams, j: int):
    """Continuous-time ``(Ac, Bc, C)`` of region ``j`` (1-based)."""
    w = 2 * math.pi * p.omega_hz[j - 1]
    Ac = np.zeros((6, 6))
    Ac[0, 1] = Ac[2, 3] = Ac[4, 5] = 1.0
    Ac[5, 4], Ac[5, 5] = -w * w, -2 * p.zeta * w
    Bc = np.zeros((6, 3))
    Bc[1, 0] = p.k1
    Bc[3, 1] = Bc[3, 2] = p.k2
    Bc[5, 1], Bc[5, 2] = -p.k3, p.k3
    C = np.zeros((2, 6))
    C[0, 0] = C[1, 2] = 1.0
    C[1, 4] = p.xbar[j - 1]
    return Ac, Bc, C


def region_polytope(p: GantryParams, j: int, extended: bool = False) -> Polytope:
    lo, hi = p.region_interval(j, extended)
    e = np.zeros(6)
    e[0] = 1.0
    return Polytope(np.vstack([e, -e]), [hi, -lo], 6)


def build_plant(p: GantryParams) -> list[ModeModel]:
    """Zero-order-hold models of the regions, ids ``1..n_regions``."""
    out = []
    for j in range(1, p.n_regions + 1):
        Ac, Bc, C = continuous_model(p, j)
        A, B = _zoh(Ac, Bc, p.T_s)
        out.append(ModeModel(j, A, B, C, region=region_polytope(p, j)))
    return out


def region_of(x_m: float, p: GantryParams, prev: int | None = None) -> int:
    """Region (1-based) holding ``x_m``; a boundary point keeps ``prev``."""
    if prev is not None:
        lo, hi = p.region_interval(prev)
        if lo <= x_m <= hi:
            return prev
    if abs(x_m) > p.x_travel + 1e-12:
        raise ValueError(f"x_m = {x_m} is outside the travel")
    return int(np.searchsorted(np.asarray(p.boundaries), x_m, side="left")) + 1


# --- reference --------------------------------------------------------------

def default_path(R_c: float = 0.08, half_line: float = 0.075) -> list:
    """Line up to the circle, one counter-clockwise lap, line away."""
    start = (R_c, -half_line)
    tangent = (R_c, 0.0)
    return [Line.through(start, tangent), Arc(0.0, 0.0, R_c, 0.0, 2 * math.pi),
            Line.through(tangent, (R_c, half_line))]


def _ends(seg):
    if isinstance(seg, Line):
        p0, p1 = seg.start, seg.end
        if p0 is None or p1 is None:
            raise ValueError("path lines need start and end points")
        return np.asarray(p0, float), np.asarray(p1, float)
    return seg.endpoints()


@dataclass
class _Profile:
    """Trapezoidal speed profile over one segment."""

    L: float
    v0: float
    v1: float
    vc: float
    a: float

    def __post_init__(self):
        L, v0, v1, a = self.L, self.v0, self.v1, self.a
        vp = math.sqrt(max(a * L + 0.5 * (v0 * v0 + v1 * v1), 0.0))
        self.vc = min(self.vc, vp)
        self.t1 = (self.vc - v0) / a
        self.t3 = (self.vc - v1) / a
        d1 = 0.5 * (v0 + self.vc) * self.t1
        d3 = 0.5 * (v1 + self.vc) * self.t3
        self.t2 = max(L - d1 - d3, 0.0) / self.vc if self.vc > 0 else 0.0
        self.d1, self.d3 = d1, d3
        self.T = self.t1 + self.t2 + self.t3

    def s(self, t: float) -> float:
        a, v0, vc = self.a, self.v0, self.vc
        if t <= self.t1:
            return v0 * t + 0.5 * a * t * t
        t -= self.t1
        if t <= self.t2:
            return self.d1 + vc * t
        t = min(t - self.t2, self.t3)
        return min(self.d1 + vc * self.t2 + vc * t - 0.5 * a * t * t, self.L)


def _tangent_continuous(s0, s1) -> bool:
    t0 = s0.tangent_at(s0.length)
    t1 = s1.tangent_at(0.0)
    return float(np.linalg.norm(t0 - t1)) <= 1e-9


@dataclass(frozen=True)
class CompositeMode:
    """A maximal run of reference samples sharing segment, region and sector."""

    mode_id: int
    segment: int
    region: int
    sector: int | None
    first: int
    count: int

    @property
    def dwell(self) -> int:
        # entering with delta = d allows the next switch d + 1 samples later
        return max(self.count - 1, 1)


@dataclass
class ReferencePlan:
    samples: np.ndarray
    segment_of: np.ndarray
    segments: list
    modes: list
    schedule: np.ndarray
    T_s: float
    duration: float

    @property
    def dwell_bounds(self) -> dict:
        return {m.mode_id: m.dwell for m in self.modes}

    @property
    def mode_sequence(self) -> list:
        return [m.mode_id for m in self.modes]

    def __len__(self):
        return self.samples.shape[0]


def generate_reference(path, v_max: float, a_max: float, T_s: float,
                       params: GantryParams | None = None,
                       annulus: dict | None = None) -> ReferencePlan:
    """Sample ``path`` under per-segment trapezoidal speed profiles.

    Tangent-continuous joints are crossed at cruise speed; any corner is
    taken at rest.  On arcs the tangential acceleration is reduced so the
    total acceleration including ``v^2 / R`` stays below ``a_max``.
    ``annulus`` maps arc segment indices to their sector partitions and is
    only needed for labelling composite modes.
    """
    if not (v_max > 0 and a_max > 0 and T_s > 0):
        raise ValueError("v_max, a_max and T_s must be positive")
    path = list(path)
    if not path:
        raise ValueError("empty path")
    for i in range(len(path) - 1):
        e = _ends(path[i])[1]
        s = _ends(path[i + 1])[0]
        if np.linalg.norm(e - s) > 1e-9:
            raise ContourError(f"path is disconnected between segments {i} and {i + 1}")
    junction = [0.0]
    for i in range(len(path) - 1):
        junction.append(v_max if _tangent_continuous(path[i], path[i + 1]) else 0.0)
    junction.append(0.0)
    profiles = []
    for i, seg in enumerate(path):
        vc, a = v_max, a_max
        if isinstance(seg, Arc):
            vc = min(v_max, 0.999 * math.sqrt(a_max * seg.R_c))
            a = 0.999 * math.sqrt(a_max ** 2 - (vc * vc / seg.R_c) ** 2)
        v0, v1 = min(junction[i], vc), min(junction[i + 1], vc)
        profiles.append(_Profile(seg.length, v0, v1, vc, a))
    starts = np.cumsum([0.0] + [pr.T for pr in profiles])
    duration = float(starts[-1])
    n = max(int(math.ceil(duration / T_s - 1e-9)), 1)
    pts = np.zeros((n, 2))
    seg_of = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        t = min(j * T_s, duration)
        i = min(int(np.searchsorted(starts, t, side="right")) - 1, len(path) - 1)
        # a sample exactly on a joint belongs to the segment that ends there
        if i > 0 and t == starts[i]:
            i -= 1
        s = profiles[i].s(t - starts[i])
        pts[j - 1] = path[i].point_at(s)
        seg_of[j - 1] = i
    pts[-1] = _ends(path[-1])[1]
    modes, schedule = _label(pts, seg_of, path, params, annulus or {})
    return ReferencePlan(pts, seg_of, path, modes, schedule, T_s, duration)


def _label(pts, seg_of, path, params, annulus):
    keys = []
    for r, i in zip(pts, seg_of):
        region = region_of(float(r[0]), params) if params is not None else 1
        sector = None
        if isinstance(path[i], Arc) and i in annulus:
            c = path[i].center
            sector = sector_of_angle(math.atan2(r[1] - c[1], r[0] - c[0]), annulus[i])
        keys.append((int(i), region, sector))
    modes, schedule = [], np.zeros(len(keys), dtype=int)
    for j, key in enumerate(keys):
        if j == 0 or key != keys[j - 1]:
            modes.append([len(modes), *key, j, 0])
        modes[-1][-1] += 1
        schedule[j] = modes[-1][0]
    return [CompositeMode(*m) for m in modes], schedule


# --- experiment -------------------------------------------------------------

class ExperimentError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"{stage}: {msg}")
        self.stage = stage


def default_mpc_config(p: GantryParams, N: int = 3) -> MpcConfig:
    return MpcConfig(N=N, Q=np.diag([1e5, 1e5]), R=np.diag([1e-1, 1e-3, 1e-2]),
                     U=p.input_box(), X=p.state_box(), Q_s=np.eye(2))


def _lift_output(P_out: Polytope, p: GantryParams, j: int) -> Polytope:
    """Output polytope pulled back to the state, robust to ``|theta| <= theta_max``.

    ``y_e = y_N + xbar_j theta``; the theta term is bounded instead of kept so
    every set stays a product of a translational and a rotational block.
    """
    C0 = np.zeros((2, 6))
    C0[0, 0] = C0[1, 2] = 1.0
    margin = np.abs(P_out.A[:, 1]) * abs(p.xbar[j - 1]) * p.theta_max
    return Polytope(P_out.A @ C0, P_out.b - margin, 6)


@dataclass
class Experiment:
    params: GantryParams
    tol: Tolerance
    cfg: MpcConfig
    path: list
    plan: ReferencePlan
    annulus: dict
    plant: list
    models: dict
    synth_models: dict
    graph: ModeGraph
    family: SwitchCiFamily | None = None
    terminals: TerminalIngredients | None = None
    extra: dict = field(default_factory=dict)

    def feasible_sets(self) -> dict:
        return {m: mm.S for m, mm in self.models.items()}

    def x0(self) -> np.ndarray:
        x = np.zeros(6)
        x[0], x[2] = _ends(self.path[0])[0]
        return x


def composite_feasible_set(mode: CompositeMode, path, tol, p: GantryParams,
                           annulus: dict) -> Polytope:
    seg = path[mode.segment]
    if isinstance(seg, Line):
        nrm = np.array([seg.a, seg.b]) / seg.norm
        off = seg.c / seg.norm
        P_out = Polytope(np.vstack([nrm, -nrm]), [tol.eps_c - off, tol.eps_c + off], 2)
    else:
        P_out = annulus[mode.segment].caps[mode.sector - 1]
    S = intersect(p.state_box(), _lift_output(P_out, p, mode.region))
    return intersect(S, region_polytope(p, mode.region, extended=True))


def build_experiment(params: GantryParams | None = None, path=None,
                     tol: Tolerance | None = None, cfg: MpcConfig | None = None,
                     v_max: float = 0.1, a_max: float = 1.0,
                     compare_slack: float | None = None) -> Experiment:
    """Plant, reference, composite modes and their feasible sets."""
    p = params or GantryParams()
    tol = tol or Tolerance(0.004)
    path = list(path or default_path())
    cfg = cfg or default_mpc_config(p)
    try:
        annulus = {}
        for i, seg in enumerate(path):
            if isinstance(seg, Arc):
                if compare_slack is None:
                    n_i, n_o = polygon_side_counts(seg.R_c, tol)
                else:
                    n_i, n_o = polygon_side_counts(seg.R_c, tol, compare_slack)
                annulus[i] = circular_feasible_sectors(seg, tol, n_i, n_o)
    except (ContourError, ValueError) as exc:
        raise ExperimentError("feasible sets", str(exc)) from exc
    try:
        plan = generate_reference(path, v_max, a_max, p.T_s, p, annulus)
    except (ContourError, ValueError) as exc:
        raise ExperimentError("reference", str(exc)) from exc
    try:
        plant = build_plant(p)
    except ValueError as exc:
        raise ExperimentError("plant", str(exc)) from exc
    models, synth = {}, {}
    for cm in plan.modes:
        S = composite_feasible_set(cm, path, tol, p, annulus)
        if is_empty(S):
            raise ExperimentError("feasible sets", f"feasible set of mode {cm.mode_id} is empty")
        base = plant[cm.region - 1]
        region = region_polytope(p, cm.region, extended=True)
        models[cm.mode_id] = ModeModel(cm.mode_id, base.A, base.B, base.C, S, region, check=False)
        synth[cm.mode_id] = ModeModel(cm.mode_id, base.A, base.B @ INPUT_SPLIT, base.C, S,
                                      region, check=False)
    ids = plan.mode_sequence
    graph = ModeGraph(ids, [(a, b) for a, b in zip(ids, ids[1:])], plan.dwell_bounds)
    return Experiment(p, tol, cfg, path, plan, annulus, plant, models, synth, graph)


def terminal_ingredients(exp: Experiment) -> TerminalIngredients:
    reg = np.zeros((6, 6))
    reg[4, 4], reg[5, 5] = exp.params.terminal_theta_weight
    return synthesize_terminal(list(exp.models.values()), exp.graph, exp.cfg,
                               state_weight_reg=reg)


def synthesize(exp: Experiment, max_iter: int = 200) -> Experiment:
    """Switch control-invariant family and terminal ingredients."""
    try:
        exp.family = switch_ci_sets(list(exp.synth_models.values()), exp.graph,
                                    exp.params.split_input_box(), max_iter=max_iter)
    except InvarianceError as exc:
        raise ExperimentError("switch CI sets", str(exc)) from exc
    try:
        exp.terminals = terminal_ingredients(exp)
    except MpcError as exc:
        raise ExperimentError("terminal ingredients", str(exc)) from exc
    return exp


def simulate(exp: Experiment, x0=None, settle_cap: int = 5000, conv_tol: float = 1e-4) -> Trace:
    if exp.family is None or exp.terminals is None:
        raise ExperimentError("simulate", "offline artifacts missing; run synthesize first")
    models = exp.models

    def may_switch(mode, x):
        return contains_point(models[mode].region, x, 1e-9)

    return control_loop(exp.x0() if x0 is None else x0, exp.plan.samples, exp.plan.schedule,
                        models, exp.graph, exp.family, exp.terminals, exp.cfg,
                        Ts=exp.params.T_s, contour=exp.path, may_switch=may_switch,
                        settle_cap=settle_cap, conv_tol=conv_tol)


def run_experiment(params: GantryParams | None = None, path=None, tol: Tolerance | None = None,
                   cfg: MpcConfig | None = None, v_max: float = 0.1,
                   a_max: float = 1.0) -> Trace:
    """Build every offline artifact and run the closed loop."""
    exp = synthesize(build_experiment(params, path, tol, cfg, v_max, a_max))
    return simulate(exp)


# --- serialization ----------------------------------------------------------

CSV_HEADER = ("k,t,rx,ry,x1,x2,x3,x4,x5,x6,u1,u2,u3,ye_x,ye_y,mode,delta,eps,cost,qp_status")


def _g(v: float) -> str:
    s = f"{float(v):.12g}"
    return "0" if s == "-0" else s


def trace_to_csv(trace: Trace) -> str:
    lines = [CSV_HEADER]
    for i in range(len(trace)):
        row = [str(int(trace.k[i])), _g(trace.t[i]), _g(trace.r[i, 0]), _g(trace.r[i, 1])]
        row += [_g(v) for v in trace.x[i]]
        row += [_g(v) for v in trace.u[i]]
        row += [_g(trace.y[i, 0]), _g(trace.y[i, 1]), str(trace.mode[i]),
                str(int(trace.delta[i])), _g(trace.eps[i]), _g(trace.cost[i]),
                str(trace.status[i])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
