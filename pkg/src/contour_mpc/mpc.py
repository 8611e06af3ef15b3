"""Online control: steady targets, terminal ingredients, dwell bookkeeping and
the condensed MPC quadratic program for switched linear systems."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .contour import contouring_error
from .invariance import ModeGraph, ModeModel, SwitchCiFamily
from .numsolve import QpProblem, Status, dlqr, dlyap, solve_qp, spectral_radius
from .polytope import Polytope

logger = logging.getLogger(__name__)

CERT_TOL = 1e-8


class MpcError(RuntimeError):
    pass


class MpcInfeasible(MpcError):
    def __init__(self, k, msg="", trace=None):
        super().__init__(f"MPC problem infeasible at k = {k}" + (f": {msg}" if msg else ""))
        self.k = k
        self.trace = trace


def _spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be a symmetric matrix")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    return 0.5 * (M + M.T)


@dataclass
class MpcConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    U: Polytope
    X: Polytope | None = None
    Q_s: np.ndarray | None = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("horizon N must be an integer >= 1")
        self.N = int(self.N)
        self.Q = _spd(self.Q, "Q")
        self.R = _spd(self.R, "R")
        self.Q_s = _spd(np.eye(self.Q.shape[0]) if self.Q_s is None else self.Q_s, "Q_s")
        if self.U.dim != self.R.shape[0]:
            raise ValueError("U and R disagree on the input dimension")


@dataclass(frozen=True)
class SteadyTarget:
    x_s: np.ndarray
    u_s: np.ndarray
    y_s: np.ndarray


@dataclass
class TerminalIngredients:
    K: dict
    P: dict
    certificate: dict
    scale: dict = field(default_factory=dict)

    def min_certificate(self) -> float:
        return min(self.certificate.values()) if self.certificate else np.inf


@dataclass(frozen=True)
class DwellState:
    sigma: Hashable
    sigma_next: Hashable | None
    delta: int


# --- steady-state target ----------------------------------------------------

def steady_target(r, model: ModeModel, cfg: MpcConfig) -> SteadyTarget:
    """Closest admissible equilibrium output to ``r`` in the ``Q_s`` norm.

    A second QP picks the equilibrium state/input of least ``R``-weighted
    input (plus a tiny state term) among those producing that output.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    n, m = model.n_x, model.n_u
    C = model.C
    E = np.hstack([model.A - np.eye(n), model.B])
    e = np.zeros(n)
    G_parts, h_parts = [], []
    if cfg.X is not None:
        G_parts.append(np.hstack([cfg.X.A, np.zeros((cfg.X.b.size, m))]))
        h_parts.append(cfg.X.b)
    G_parts.append(np.hstack([np.zeros((cfg.U.b.size, n)), cfg.U.A]))
    h_parts.append(cfg.U.b)
    G, h = np.vstack(G_parts), np.concatenate(h_parts)

    H1 = np.zeros((n + m, n + m))
    H1[:n, :n] = 2 * C.T @ cfg.Q_s @ C
    f1 = np.concatenate([-2 * C.T @ cfg.Q_s @ r, np.zeros(m)])
    res = solve_qp(QpProblem(H1, f1, G, h, E, e), method="primal")
    if res.status is Status.INFEASIBLE:
        raise MpcError(f"no admissible equilibrium for mode {model.mode_id}")
    if not res.optimal:
        raise MpcError(f"steady-target QP failed: {res.status.value} {res.message}")
    y_s = C @ res.x[:n]

    H2 = np.zeros((n + m, n + m))
    H2[:n, :n] = 2e-6 * np.eye(n)
    H2[n:, n:] = 2 * cfg.R
    E2 = np.vstack([E, np.hstack([C, np.zeros((C.shape[0], m))])])
    e2 = np.concatenate([e, y_s])
    res2 = solve_qp(QpProblem(H2, np.zeros(n + m), G, h, E2, e2))
    z = res2.x if res2.optimal else res.x
    x_s, u_s = z[:n], z[n:]
    return SteadyTarget(x_s, u_s, C @ x_s)


# --- terminal ingredients ---------------------------------------------------

def _cert(P_m, P_n, Acl, W):
    M = P_m - Acl.T @ P_n @ Acl - W
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def synthesize_terminal(models: Sequence[ModeModel], graph: ModeGraph, cfg: MpcConfig,
                        lam_max: float = 1e6, rel_tol: float = 1e-6,
                        state_weight_reg=None) -> TerminalIngredients:
    """LQR gain and Lyapunov terminal weight per mode, certified on every edge.

    When an edge ``(m, n)`` violates the decrease condition, ``P_m`` is scaled
    by the smallest factor in ``[1, lam_max]`` (bisection) that repairs all
    of mode ``m``'s edges.  Modes are visited successors-first when the graph
    is acyclic, otherwise swept until nothing changes.

    ``state_weight_reg`` (n_x×n_x, PSD) is added to ``CᵀQC`` when designing
    ``K`` and ``P``; it is not part of the certified inequality, which keeps
    ``CᵀQC + KᵀRK``.  Modes whose output does not see some stable state get a
    singular ``P`` otherwise, and no scaling can then dominate a successor
    that does see it.
    """
    byid = {mm.mode_id: mm for mm in models}
    K, P, W, Acl = {}, {}, {}, {}
    for m in graph.modes:
        mm = byid[m]
        Qx = mm.C.T @ cfg.Q @ mm.C
        Qd = Qx if state_weight_reg is None else Qx + np.asarray(state_weight_reg, dtype=float)
        K[m], _ = dlqr(mm.A, mm.B, Qd, cfg.R)
        Acl[m] = mm.A + mm.B @ K[m]
        if spectral_radius(Acl[m]) >= 1:
            raise MpcError(f"mode {m}: LQR closed loop is not stable")
        W[m] = Qx + K[m].T @ cfg.R @ K[m]
        P[m] = dlyap(Acl[m], W[m] + (Qd - Qx))
    scale = {m: 1.0 for m in graph.modes}

    def edges_of(m):
        return [m] + graph.successors(m)

    def worst(m, lam):
        return min(_cert(lam * P[m], P[n], Acl[m], W[m]) for n in edges_of(m))

    order = graph.topological_order()
    sweeps = [list(reversed(order))] if order is not None else [graph.modes] * 50
    for sweep in sweeps:
        changed = False
        for m in sweep:
            if worst(m, 1.0) >= -CERT_TOL:
                continue
            if worst(m, lam_max) < -CERT_TOL:
                raise MpcError("terminal condition unsatisfiable with Lyapunov-based P "
                               f"(mode {m} needs a scale above {lam_max:g})")
            lo, hi = 1.0, lam_max
            while hi - lo > rel_tol * hi:
                mid = 0.5 * (lo + hi)
                if worst(m, mid) >= -CERT_TOL:
                    hi = mid
                else:
                    lo = mid
            P[m] = hi * P[m]
            scale[m] *= hi
            changed = True
        if not changed and order is None:
            break
    cert = {}
    for m in graph.modes:
        for n in edges_of(m):
            cert[(m, n)] = _cert(P[m], P[n], Acl[m], W[m])
    bad = {e: v for e, v in cert.items() if v < -CERT_TOL}
    if bad:
        raise MpcError(f"terminal certificate fails on edges {sorted(bad)}")
    return TerminalIngredients(K, P, cert, scale)


# --- dwell bookkeeping ------------------------------------------------------

def update_dwell(ds: DwellState, sigma_new, graph: ModeGraph, sigma_next=None) -> DwellState:
    """Remaining dwell after moving to ``sigma_new``."""
    if sigma_new == ds.sigma:
        return DwellState(ds.sigma, ds.sigma_next if sigma_next is None else sigma_next,
                          max(ds.delta - 1, 0))
    if ds.delta > 0:
        raise MpcError(f"dwell violation: switch {ds.sigma} -> {sigma_new} with "
                       f"{ds.delta} samples of dwell left")
    if not graph.has_edge(ds.sigma, sigma_new):
        raise MpcError(f"switch {ds.sigma} -> {sigma_new} is not an edge of the mode graph")
    return DwellState(sigma_new, sigma_next, int(graph.dwell[sigma_new]))


def stage_sets(ds: DwellState, family: SwitchCiFamily, N: int,
               S_active: Polytope | None = None) -> list:
    """Sets constraining ``x(i+1|k)``, ``i = 0..N-1``.

    With stored backward-reachable ladders the state must stay ``delta - i``
    steps away from ``C_sigma`` (which implies staying in ``S``); without
    them the plain ``S_active`` / ``C_sigma`` split is used.
    """
    C = family.sets[ds.sigma]
    if family.ladders.get(ds.sigma):
        return [family.level(ds.sigma, max(ds.delta - i, 0)) for i in range(N)]
    if S_active is None and ds.delta > 0:
        raise MpcError("S_active is required when no ladder is stored")
    return [S_active if i < ds.delta else C for i in range(N)]


# --- condensed QP -----------------------------------------------------------

class Predictor:
    """Stacked prediction ``x(i) = Phi_i x0 + Gamma_i U`` for ``i = 0..N``."""

    def __init__(self, model: ModeModel, N: int):
        n, m = model.n_x, model.n_u
        self.N, self.n, self.m = N, n, m
        self.Phi = np.zeros((N + 1, n, n))
        self.Gam = np.zeros((N + 1, n, N * m))
        self.Phi[0] = np.eye(n)
        for i in range(1, N + 1):
            self.Phi[i] = model.A @ self.Phi[i - 1]
            self.Gam[i] = model.A @ self.Gam[i - 1]
            self.Gam[i][:, (i - 1) * m:i * m] = model.B


@dataclass
class MpcResult:
    u0: np.ndarray
    cost: float
    predicted: np.ndarray
    inputs: np.ndarray
    status: Status
    iterations: int = 0


_PRED_CACHE: dict = {}


def _predictor(model, N):
    key = (id(model), N)
    hit = _PRED_CACHE.get(key)
    if hit is None or hit[0] is not model:
        hit = (model, Predictor(model, N))
        _PRED_CACHE[key] = hit
    return hit[1]


def build_qp(x, target: SteadyTarget, model: ModeModel, cfg: MpcConfig, P: np.ndarray,
             sets: Sequence[Polytope]):
    """Condensed QP data and the constant dropped from its objective."""
    x = np.asarray(x, dtype=float)
    N = cfg.N
    pr = _predictor(model, N)
    m = pr.m
    C, Q, R = model.C, cfg.Q, cfg.R
    H = np.zeros((N * m, N * m))
    f = np.zeros(N * m)
    const = 0.0
    for i in range(N + 1):
        Gi, free = pr.Gam[i], pr.Phi[i] @ x
        if i < N:
            W = C.T @ Q @ C
            err = C @ free - target.y_s
            const += err @ Q @ err
            g = C.T @ Q @ err
        else:
            W = P
            err = free - target.x_s
            const += err @ P @ err
            g = P @ err
        H += 2 * Gi.T @ W @ Gi
        f += 2 * Gi.T @ g
    Rbar = np.kron(np.eye(N), R)
    ubar = np.tile(target.u_s, N)
    H += 2 * Rbar
    f -= 2 * Rbar @ ubar
    const += ubar @ Rbar @ ubar
    G_parts, h_parts = [], []
    for i, S in enumerate(sets):
        G_parts.append(S.A @ pr.Gam[i + 1])
        h_parts.append(S.b - S.A @ (pr.Phi[i + 1] @ x))
    G_parts.append(np.kron(np.eye(N), cfg.U.A))
    h_parts.append(np.tile(cfg.U.b, N))
    return QpProblem(H, f, np.vstack(G_parts), np.concatenate(h_parts)), const


def solve_mpc(x, target: SteadyTarget, model: ModeModel, cfg: MpcConfig, P: np.ndarray,
              sets: Sequence[Polytope], k: int = 0) -> MpcResult:
    """Solve one MPC problem with explicit stage sets ``x(i+1|k) in sets[i]``."""
    if len(sets) != cfg.N:
        raise ValueError(f"need {cfg.N} stage sets, got {len(sets)}")
    qp, const = build_qp(x, target, model, cfg, P, sets)
    res = solve_qp(qp)
    if res.status is Status.INFEASIBLE:
        raise MpcInfeasible(k, f"mode {model.mode_id}")
    if not res.optimal:
        raise MpcError(f"MPC QP failed at k = {k}: {res.status.value} {res.message}")
    pr = _predictor(model, cfg.N)
    U = res.x
    pred = np.array([pr.Phi[i] @ x + pr.Gam[i] @ U for i in range(cfg.N + 1)])
    cost = float(res.obj + const)
    return MpcResult(U[:model.n_u].copy(), cost, pred, U.reshape(cfg.N, model.n_u),
                     res.status, res.iterations)


def mpc_step(x, ds: DwellState, target: SteadyTarget, family: SwitchCiFamily,
             S_active: Polytope | None, models: Mapping, cfg: MpcConfig,
             terminals: TerminalIngredients, k: int = 0) -> MpcResult:
    """One receding-horizon step in mode ``ds.sigma``.

    Returns the first input ``u0``, the optimal cost ``J*`` (including the
    constant terms, so ``J* = 0`` at the target) and the predicted states.
    Raises :class:`MpcInfeasible` carrying ``k`` when no admissible input
    sequence exists.
    """
    sets = stage_sets(ds, family, cfg.N, S_active)
    return solve_mpc(x, target, models[ds.sigma], cfg, terminals.P[ds.sigma], sets, k)


# --- closed loop ------------------------------------------------------------

@dataclass
class Trace:
    k: np.ndarray
    t: np.ndarray
    r: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    mode: list
    delta: np.ndarray
    eps: np.ndarray
    cost: np.ndarray
    status: list
    n_reference: int = 0
    y_s: np.ndarray | None = None

    def __len__(self):
        return self.k.size

    def summary(self) -> dict:
        err = np.abs(self.y - self.r) if len(self) else np.zeros((0, 2))
        switches = sum(1 for a, b in zip(self.mode, self.mode[1:]) if a != b)
        return {
            "steps": int(len(self)),
            "max_eps": float(np.max(self.eps)) if len(self) else 0.0,
            "max_err_x": float(err[:, 0].max()) if len(self) else 0.0,
            "max_err_y": float(err[:, 1].max()) if len(self) else 0.0,
            "switches": switches,
            "infeasible": sum(1 for s in self.status if s != Status.OPTIMAL.value),
        }


class _Recorder:
    def __init__(self):
        self.rows = []

    def add(self, **kw):
        self.rows.append(kw)

    def trace(self, Ts, n_ref):
        R = self.rows
        if not R:
            z = np.zeros(0)
            return Trace(z.astype(int), z, np.zeros((0, 2)), np.zeros((0, 0)), np.zeros((0, 0)),
                         np.zeros((0, 2)), [], z.astype(int), z, z, [], n_ref)
        k = np.array([r["k"] for r in R])
        return Trace(k, k * Ts, np.array([r["r"] for r in R]), np.array([r["x"] for r in R]),
                     np.array([r["u"] for r in R]), np.array([r["y"] for r in R]),
                     [r["mode"] for r in R], np.array([r["delta"] for r in R]),
                     np.array([r["eps"] for r in R]), np.array([r["cost"] for r in R]),
                     [r["status"] for r in R], n_ref, np.array([r["y_s"] for r in R]))


def control_loop(x0, references, schedule: Sequence, models: Mapping, graph: ModeGraph,
                 family: SwitchCiFamily, terminals: TerminalIngredients, cfg: MpcConfig,
                 Ts: float = 1.0, contour=None,
                 plant: Callable | None = None,
                 may_switch: Callable | None = None,
                 settle_cap: int = 5000, conv_tol: float = 1e-4) -> Trace:
    """Run the MPC in closed loop along a reference with a scheduled mode order.

    ``schedule[j]`` is the mode the reference sample ``j`` belongs to; the
    loop switches to the successor of the current mode once the dwell has
    run out, the schedule has moved on and ``may_switch(mode, x)`` agrees.
    After the last sample the reference is held until ``|y - y_s| <= conv_tol``
    or ``settle_cap`` extra steps have passed.
    """
    refs = np.asarray(references, dtype=float).reshape(-1, 2)
    n_ref = refs.shape[0]
    if n_ref == 0 or len(schedule) != n_ref:
        raise ValueError("references and schedule must be non-empty and equally long")
    first = {}
    for j, mo in enumerate(schedule):
        first.setdefault(mo, j)
    if plant is None:
        def plant(x, u, mode):
            return models[mode].A @ x + models[mode].B @ u

    def next_mode(m):
        succ = graph.successors(m)
        if not succ:
            return None
        later = [n for n in succ if first.get(n, -1) > first.get(m, -1)]
        return min(later or succ, key=lambda n: first.get(n, np.inf))

    x = np.asarray(x0, dtype=float).copy()
    rec = _Recorder()
    sigma = schedule[0]
    ds = DwellState(sigma, next_mode(sigma), int(graph.dwell[sigma]))
    targets: dict = {}
    k = 0
    settle = 0
    while True:
        j = min(k, n_ref - 1)
        r = refs[j]
        if k > 0:
            cand = ds.sigma_next
            sched = schedule[j]
            want = (cand is not None and ds.delta == 0
                    and first.get(sched, -1) >= first.get(cand, np.inf))
            if want and (may_switch is None or may_switch(cand, x)):
                ds = update_dwell(ds, cand, graph, next_mode(cand))
            else:
                ds = update_dwell(ds, ds.sigma, graph)
        model = models[ds.sigma]
        key = (ds.sigma, r.tobytes())
        target = targets.get(key)
        if target is None:
            target = steady_target(r, model, cfg)
            targets[key] = target
        y = model.C @ x
        try:
            res = mpc_step(x, ds, target, family, model.S, models, cfg, terminals, k)
        except MpcInfeasible as exc:
            exc.trace = rec.trace(Ts, n_ref)
            raise
        eps = contouring_error(y, contour) if contour is not None else float("nan")
        rec.add(k=k, r=r, x=x.copy(), u=res.u0, y=y, mode=ds.sigma, delta=ds.delta,
                eps=eps, cost=res.cost, status=res.status.value, y_s=target.y_s)
        x = plant(x, res.u0, ds.sigma)
        k += 1
        if k >= n_ref:
            settle += 1
            y_next = models[ds.sigma].C @ x
            done = np.linalg.norm(y_next - target.y_s) <= conv_tol and ds.delta == 0
            if done or settle > settle_cap:
                break
    return rec.trace(Ts, n_ref)
