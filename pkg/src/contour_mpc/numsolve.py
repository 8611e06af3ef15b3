"""Small dense numerical kernels: LP, convex QP, discrete Riccati and Lyapunov.

Problems handled here are tiny (tens of variables, up to a few thousand
inequalities), so everything is dense numpy.  Every ``Optimal`` result is
checked against the repo-wide residual contract before it is returned.
"""
from __future__ import annotations

import contextlib
import contextvars
import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

FEAS_TOL = 1e-8
OPT_TOL = 1e-6
MAX_ITER = 100_000
RESIDUAL_TOL = 1e-9


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


class SolverError(RuntimeError):
    """Raised by the Riccati/Lyapunov routines when their preconditions fail."""


def _as_2d(M, ncols):
    if M is None:
        return np.zeros((0, ncols))
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros((0, ncols))
    return np.atleast_2d(M)


def _as_1d(v, n):
    if v is None:
        return np.zeros(n)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0:
        return np.zeros(0)
    return v


@dataclass(frozen=True)
class LpProblem:
    """min c'z  s.t.  G z <= h,  E z = e."""

    c: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    E: np.ndarray | None = None
    e: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        G, h = _as_2d(self.G, n), _as_1d(self.h, 0)
        E, e = _as_2d(self.E, n), _as_1d(self.e, 0)
        _check_block(G, h, n, "G/h")
        _check_block(E, e, n, "E/e")
        for name, arr in (("c", c), ("G", G), ("h", h), ("E", E), ("e", e)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"LpProblem.{name} has non-finite entries")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "e", e)


@dataclass(frozen=True)
class QpProblem:
    """min 1/2 z'Hz + f'z  s.t.  G z <= h,  E z = e."""

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    E: np.ndarray | None = None
    e: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be square, got {H.shape}")
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if f.size != n:
            raise ValueError(f"f has length {f.size}, expected {n}")
        if not np.allclose(H, H.T, atol=1e-9 * max(1.0, np.abs(H).max())):
            raise ValueError("H must be symmetric")
        G, h = _as_2d(self.G, n), _as_1d(self.h, 0)
        E, e = _as_2d(self.E, n), _as_1d(self.e, 0)
        _check_block(G, h, n, "G/h")
        _check_block(E, e, n, "E/e")
        for name, arr in (("H", H), ("f", f), ("G", G), ("h", h), ("E", E), ("e", e)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"QpProblem.{name} has non-finite entries")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "e", e)


def _check_block(M, v, n, name):
    if M.shape[1] != n:
        raise ValueError(f"{name}: matrix has {M.shape[1]} columns, expected {n}")
    if M.shape[0] != v.size:
        raise ValueError(f"{name}: {M.shape[0]} rows but {v.size} right-hand sides")


@dataclass
class SolveStatus:
    status: Status
    x: np.ndarray | None = None
    obj: float | None = None
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    iterations: int = 0
    ineq_multipliers: np.ndarray | None = field(default=None, repr=False)
    eq_multipliers: np.ndarray | None = field(default=None, repr=False)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# --- residual bookkeeping ---------------------------------------------------

@dataclass
class ResidualLog:
    """Worst residuals over all Optimal LP/QP results seen inside a context."""

    lp_count: int = 0
    qp_count: int = 0
    max_primal: float = 0.0
    max_dual: float = 0.0

    def record(self, kind: str, res: SolveStatus) -> None:
        if kind == "lp":
            self.lp_count += 1
        else:
            self.qp_count += 1
        self.max_primal = max(self.max_primal, res.primal_residual)
        self.max_dual = max(self.max_dual, res.dual_residual)


_active_logs: contextvars.ContextVar[tuple[ResidualLog, ...]] = contextvars.ContextVar(
    "contour_mpc_residual_logs", default=()
)


@contextlib.contextmanager
def residual_log():
    """Collect residual statistics of every Optimal solve in this context."""
    log = ResidualLog()
    token = _active_logs.set(_active_logs.get() + (log,))
    try:
        yield log
    finally:
        _active_logs.reset(token)


def _record(kind, res):
    if res.status is Status.OPTIMAL:
        for log in _active_logs.get():
            log.record(kind, res)
    return res


def _residuals(z, c_grad, G, h, E, e, lam, nu):
    primal = 0.0
    if G.shape[0]:
        primal = max(primal, float(np.max(G @ z - h, initial=0.0)))
    if E.shape[0]:
        primal = max(primal, float(np.max(np.abs(E @ z - e))))
    r = c_grad.copy()
    if G.shape[0]:
        r += G.T @ lam
    if E.shape[0]:
        r += E.T @ nu
    return primal, float(np.linalg.norm(r, np.inf))


# --- linear programming -----------------------------------------------------

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


_LP_ATTEMPTS = (
    ("highs", _HIGHS_OPTIONS),
    ("highs-ds", {**_HIGHS_OPTIONS, "presolve": False}),
    ("highs-ipm", {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}),
)


def solve_lp(p: LpProblem) -> SolveStatus:
    """Solve a dense LP with HiGHS and certify the KKT residuals.

    Returns a ``SolveStatus`` whose classification is one of Optimal,
    Infeasible, Unbounded or NumericalFailure.  An Optimal answer always
    satisfies the module tolerances ``FEAS_TOL`` and ``OPT_TOL``.
    """
    n = p.c.size
    if n == 0:
        ok = np.all(p.h >= -FEAS_TOL) and np.all(np.abs(p.e) <= FEAS_TOL)
        if not ok:
            return SolveStatus(Status.INFEASIBLE)
        return _record("lp", SolveStatus(Status.OPTIMAL, np.zeros(0), 0.0, 0.0, 0.0))
    for method, opts in _LP_ATTEMPTS:
        res = linprog(
            p.c,
            A_ub=p.G if p.G.shape[0] else None,
            b_ub=p.h if p.G.shape[0] else None,
            A_eq=p.E if p.E.shape[0] else None,
            b_eq=p.e if p.E.shape[0] else None,
            bounds=[(None, None)] * n,
            method=method,
            options={**opts, "maxiter": MAX_ITER},
        )
        # HiGHS occasionally gives up on degenerate inputs; retry differently
        if res.status in (0, 2, 3):
            break
    if res.status == 2:
        return SolveStatus(Status.INFEASIBLE, message=res.message)
    if res.status == 3:
        return SolveStatus(Status.UNBOUNDED, message=res.message)
    if res.status != 0 or res.x is None:
        return SolveStatus(Status.NUMERICAL_FAILURE, message=res.message)

    z = np.asarray(res.x, dtype=float)
    lam = -np.asarray(res.ineqlin.marginals) if p.G.shape[0] else np.zeros(0)
    nu = -np.asarray(res.eqlin.marginals) if p.E.shape[0] else np.zeros(0)
    lam = np.maximum(lam, 0.0)
    primal, dual = _residuals(z, p.c, p.G, p.h, p.E, p.e, lam, nu)
    if primal > FEAS_TOL or dual > OPT_TOL:
        z, lam, nu = _polish_lp(p, z, lam, nu)
        primal, dual = _residuals(z, p.c, p.G, p.h, p.E, p.e, lam, nu)
    if primal > FEAS_TOL or dual > OPT_TOL:
        return SolveStatus(
            Status.NUMERICAL_FAILURE, z, float(p.c @ z), primal, dual,
            message=f"residuals {primal:.2e}/{dual:.2e} above tolerance",
        )
    out = SolveStatus(Status.OPTIMAL, z, float(p.c @ z), primal, dual,
                      int(getattr(res, "nit", 0)), lam, nu)
    return _record("lp", out)


def _polish_lp(p, z, lam, nu):
    """Snap an almost-optimal LP vertex onto its active constraints."""
    slack = p.h - p.G @ z if p.G.shape[0] else np.zeros(0)
    act = np.flatnonzero((slack < 1e-7) | (lam > 1e-9))
    A = np.vstack([p.E, p.G[act]]) if act.size else p.E
    b = np.concatenate([p.e, p.h[act]]) if act.size else p.e
    if A.shape[0]:
        dz = np.linalg.lstsq(A, b - A @ z, rcond=None)[0]
        z = z + dz
        mult = np.linalg.lstsq(A.T, -p.c, rcond=None)[0]
        nu = mult[: p.E.shape[0]]
        lam = np.zeros(p.G.shape[0])
        lam[act] = np.maximum(mult[p.E.shape[0]:], 0.0)
    return z, lam, nu


# --- quadratic programming --------------------------------------------------

def _null_space(A, n, tol=1e-12):
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return vt[rank:].T


def solve_qp(p: QpProblem, x0: np.ndarray | None = None, method: str = "auto") -> SolveStatus:
    """Dense active-set QP solver.

    ``method="dual"`` runs the Goldfarb-Idnani dual method and needs a
    positive definite Hessian; ``"primal"`` handles any PSD Hessian.  The
    default picks the dual method whenever a Cholesky factor exists.
    """
    if method not in ("auto", "dual", "primal"):
        raise ValueError(f"unknown QP method {method!r}")
    if method != "primal":
        try:
            L = np.linalg.cholesky(p.H)
        except np.linalg.LinAlgError:
            if method == "dual":
                raise ValueError("dual QP method needs a positive definite Hessian")
            L = None
        if L is not None:
            return _solve_qp_dual(p, L)
    return _solve_qp_primal(p, x0)


def _independent_rows(E, e, tol=1e-10):
    """Drop linearly dependent equality rows; None if they are inconsistent."""
    Q, R, piv = scipy.linalg.qr(E.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(1.0, diag.max(initial=0.0))))
    keep = np.sort(piv[:rank])
    Ek, ek = E[keep], e[keep]
    if rank < E.shape[0]:
        z = np.linalg.lstsq(Ek, ek, rcond=None)[0]
        if np.max(np.abs(E @ z - e)) > 1e-9 * max(1.0, float(np.abs(e).max())):
            return None, None
    return Ek, ek


def _solve_qp_dual(p: QpProblem, L) -> SolveStatus:
    """Goldfarb-Idnani: start from the unconstrained minimizer and add violated
    constraints while keeping dual feasibility."""
    H, f, G, h, E, e = p.H, p.f, p.G, p.h, p.E, p.e
    if E.shape[0]:
        E, e = _independent_rows(E, e)
        if E is None:
            return SolveStatus(Status.INFEASIBLE, message="inconsistent equality constraints")
    n, me, m = f.size, E.shape[0], G.shape[0]
    Linv = np.linalg.solve(L, np.eye(n))
    Hinv = Linv.T @ Linv
    viol_tol = 1e-11 * max(1.0, float(np.abs(h).max(initial=0.0)))

    # active normals in ">=" form: equalities (rows 0..me-1) first
    normals = [-(E[i]) for i in range(me)]
    rhs = [-(e[i]) for i in range(me)]
    active: list[int] = [-1] * me
    u = np.zeros(me)

    def reduced(Nmat):
        if Nmat.shape[1] == 0:
            return np.zeros((0, n)), Hinv
        M = Nmat.T @ Hinv @ Nmat
        Nstar = np.linalg.solve(M, Nmat.T @ Hinv)
        return Nstar, Hinv - Hinv @ Nmat @ Nstar

    z = -Hinv @ f
    if me:
        N = np.array(normals).T
        Nstar, Hred = reduced(N)
        # equality-constrained minimizer
        lam = np.linalg.solve(N.T @ Hinv @ N, np.array(rhs) + N.T @ Hinv @ f)
        z = Hinv @ (N @ lam - f)
        u = lam.copy()

    it = 0
    while it < MAX_ITER:
        it += 1
        if m == 0:
            break
        viol = G @ z - h
        inact = np.ones(m, dtype=bool)
        inact[[a for a in active if a >= 0]] = False
        viol[~inact] = -np.inf
        q = int(np.argmax(viol))
        if viol[q] <= viol_tol:
            break
        n_q, b_q = -G[q], -h[q]
        u_q = 0.0
        while True:
            it += 1
            if it > MAX_ITER:
                break
            N = np.array(normals).T if normals else np.zeros((n, 0))
            Nstar, Hred = reduced(N)
            step = Hred @ n_q
            r = Nstar @ n_q
            # largest dual step before an inequality multiplier hits zero
            t1, drop = np.inf, -1
            for j in range(me, len(active)):
                if r[j] > 1e-14 and u[j] / r[j] < t1:
                    t1, drop = u[j] / r[j], j
            curv = float(step @ n_q)
            if curv <= 1e-14 * max(1.0, float(n_q @ n_q)):
                if drop < 0:
                    return SolveStatus(Status.INFEASIBLE, iterations=it,
                                       message=f"constraint {q} cannot be satisfied")
                u[me:] = u[me:] - t1 * r[me:]
                u_q += t1
                del normals[drop], rhs[drop], active[drop]
                u = np.delete(u, drop)
                continue
            t2 = -(n_q @ z - b_q) / curv
            t = min(t1, t2)
            z = z + t * step
            u = u - t * r
            u_q += t
            if t2 <= t1:
                normals.append(n_q)
                rhs.append(b_q)
                active.append(q)
                u = np.append(u, u_q)
                break
            del normals[drop], rhs[drop], active[drop]
            u = np.delete(u, drop)
        else:
            continue
        if it > MAX_ITER:
            break
    if it >= MAX_ITER:
        return SolveStatus(Status.NUMERICAL_FAILURE, z, iterations=it,
                           message="iteration cap reached")
    working = [a for a in active if a >= 0]
    z, lam, nu = _polish_qp(p, z, working)
    primal, dual = _residuals(z, H @ z + f, G, h, E, e, lam, nu)
    obj = float(0.5 * z @ H @ z + f @ z)
    if primal > FEAS_TOL or dual > OPT_TOL:
        return SolveStatus(Status.NUMERICAL_FAILURE, z, obj, primal, dual, it,
                           message=f"residuals {primal:.2e}/{dual:.2e} above tolerance")
    return _record("qp", SolveStatus(Status.OPTIMAL, z, obj, primal, dual, it, lam, nu))


def _solve_qp_primal(p: QpProblem, x0: np.ndarray | None = None) -> SolveStatus:
    """Primal active-set solver for convex (PSD) quadratic programs.

    A feasible starting point comes from ``x0`` when it is feasible, otherwise
    from a phase-one LP.  Steps are computed in the null space of the working
    set, so singular (PSD) Hessians are handled and unbounded problems are
    detected along zero-curvature descent rays.
    """
    n = p.f.size
    H, f, G, h, E, e = p.H, p.f, p.G, p.h, p.E, p.e
    m = G.shape[0]
    scale = max(1.0, float(np.abs(H).max(initial=0.0)), float(np.abs(f).max(initial=0.0)))

    z = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.size == n and _feasible(x0, G, h, E, e, 1e-10):
            z = x0.copy()
    if z is None:
        if m == 0 and E.shape[0] == 0:
            z = np.zeros(n)
        else:
            ph1 = solve_lp(LpProblem(np.zeros(n), G, h, E, e))
            if ph1.status is Status.INFEASIBLE:
                return SolveStatus(Status.INFEASIBLE, message="phase-one LP infeasible")
            if ph1.status is not Status.OPTIMAL:
                return SolveStatus(Status.NUMERICAL_FAILURE, message="phase-one LP failed")
            z = ph1.x.copy()

    act_tol = 1e-9
    working: list[int] = []
    if m:
        slack = h - G @ z
        for i in np.flatnonzero(np.abs(slack) <= act_tol):
            cand = working + [int(i)]
            A = np.vstack([E, G[cand]])
            if np.linalg.matrix_rank(A, tol=1e-10) == A.shape[0]:
                working = cand

    it = 0
    while it < MAX_ITER:
        it += 1
        A_w = np.vstack([E, G[working]]) if working else E
        g = H @ z + f
        Z = _null_space(A_w, n)
        step = np.zeros(n)
        ray = False
        if Z.shape[1]:
            Hr = Z.T @ H @ Z
            gr = Z.T @ g
            w, V = np.linalg.eigh(Hr)
            pos = w > 1e-12 * scale
            coef = V.T @ gr
            flat = ~pos
            if flat.any() and np.linalg.norm(coef[flat]) > 1e-12 * scale:
                step = -Z @ (V[:, flat] @ coef[flat])
                ray = True
            else:
                step = -Z @ (V[:, pos] @ (coef[pos] / w[pos]))

        if np.linalg.norm(step, np.inf) <= 1e-13 * max(1.0, np.linalg.norm(z, np.inf)):
            mult = (np.linalg.lstsq(A_w.T, -g, rcond=None)[0]
                    if A_w.shape[0] else np.zeros(0))
            lam_w = mult[E.shape[0]:]
            if lam_w.size == 0 or lam_w.min() >= -1e-10 * scale:
                break
            # Bland-style: drop the lowest-index most-negative multiplier
            j = int(np.argmin(lam_w))
            working.pop(j)
            continue

        alpha, block = (np.inf, -1) if ray else (1.0, -1)
        if m:
            Gp = G @ step
            inact = np.ones(m, dtype=bool)
            inact[working] = False
            cand = np.flatnonzero(inact & (Gp > 1e-14 * max(1.0, np.abs(G).max())))
            if cand.size:
                ratios = np.maximum(h[cand] - G[cand] @ z, 0.0) / Gp[cand]
                k = int(np.argmin(ratios))
                if ratios[k] < alpha:
                    alpha, block = float(ratios[k]), int(cand[k])
        if not np.isfinite(alpha):
            return SolveStatus(Status.UNBOUNDED, iterations=it,
                               message="descent ray with zero curvature")
        z = z + alpha * step
        if block >= 0:
            working.append(block)
    else:
        return SolveStatus(Status.NUMERICAL_FAILURE, z, iterations=it,
                           message="iteration cap reached")

    z, lam, nu = _polish_qp(p, z, working)
    primal, dual = _residuals(z, H @ z + f, G, h, E, e, lam, nu)
    obj = float(0.5 * z @ H @ z + f @ z)
    if primal > FEAS_TOL or dual > OPT_TOL:
        return SolveStatus(Status.NUMERICAL_FAILURE, z, obj, primal, dual, it,
                           message=f"residuals {primal:.2e}/{dual:.2e} above tolerance")
    return _record("qp", SolveStatus(Status.OPTIMAL, z, obj, primal, dual, it, lam, nu))


def _feasible(z, G, h, E, e, tol):
    if G.shape[0] and np.max(G @ z - h) > tol:
        return False
    if E.shape[0] and np.max(np.abs(E @ z - e)) > tol:
        return False
    return True


def _polish_qp(p, z, working):
    """Re-solve the KKT system of the final working set and clip multipliers."""
    H, f, G, h, E, e = p.H, p.f, p.G, p.h, p.E, p.e
    n, me = f.size, E.shape[0]
    A_w = np.vstack([E, G[working]]) if working else E
    b_w = np.concatenate([e, h[working]]) if working else e
    k = A_w.shape[0]
    K = np.block([[H, A_w.T], [A_w, np.zeros((k, k))]]) if k else H
    rhs = np.concatenate([-f, b_w])

    def kkt(zc):
        g = H @ zc + f
        mult = np.linalg.lstsq(A_w.T, -g, rcond=None)[0] if k else np.zeros(0)
        lam = np.zeros(G.shape[0])
        if working:
            lam[working] = np.maximum(mult[me:], 0.0)
        primal, dual = _residuals(zc, g, G, h, E, e, lam, mult[:me])
        return max(primal / FEAS_TOL, dual / OPT_TOL), zc, lam, mult[:me]

    best = kkt(z)
    # the iterate can drift when the active normals are nearly dependent;
    # the exact KKT point of the working set then wins on residuals
    try:
        z_new = np.linalg.solve(K, rhs)[:n]
        if np.all(np.isfinite(z_new)):
            cand = kkt(z_new)
            if cand[0] < best[0]:
                best = cand
    except np.linalg.LinAlgError:
        pass
    return best[1], best[2], best[3]


# --- Riccati / Lyapunov -----------------------------------------------------

def _spectral_radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def dlyap(Acl, W, tol: float = RESIDUAL_TOL, max_iter: int = 10_000) -> np.ndarray:
    """Solve P = Acl' P Acl + W by Smith doubling.

    The residual is measured relative to ``max(1, ||P||_F)`` so the same
    tolerance is meaningful for the large terminal weights used in MPC.
    """
    Acl = np.atleast_2d(np.asarray(Acl, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if _spectral_radius(Acl) >= 1.0:
        raise SolverError("dlyap: closed-loop matrix is not Schur stable")
    W = 0.5 * (W + W.T)
    P = W.copy()
    Ak = Acl.copy()
    for _ in range(max_iter):
        P_next = P + Ak.T @ P @ Ak
        Ak = Ak @ Ak
        done = np.linalg.norm(P_next - P) <= 1e-16 * max(1.0, np.linalg.norm(P_next))
        P = P_next
        if done or np.linalg.norm(Ak) < 1e-300:
            break
    # two fixed-point sweeps mop up the doubling round-off
    for _ in range(2):
        P = Acl.T @ P @ Acl + W
    P = 0.5 * (P + P.T)
    res = np.linalg.norm(P - Acl.T @ P @ Acl - W)
    if res > tol * max(1.0, np.linalg.norm(P)):
        raise SolverError(f"dlyap: residual {res:.3e} did not converge")
    return P


def dlqr(A, B, Qx, R):
    """Infinite-horizon discrete LQR with the convention u = K x.

    Returns ``(K, P)`` where ``K = -(R + B'PB)^{-1} B'PA`` and P solves the
    discrete algebraic Riccati equation.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    Qx = np.atleast_2d(np.asarray(Qx, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Qx, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"dlqr: Riccati solve failed ({exc}); is (A, B) stabilizable?") from exc
    P = 0.5 * (P + P.T)
    # Newton-Hewer refinement: each step is a Lyapunov solve
    for _ in range(3):
        K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        Acl = A + B @ K
        if _spectral_radius(Acl) >= 1.0:
            break
        P = dlyap(Acl, Qx + K.T @ R @ K, tol=1e-6)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    Acl = A + B @ K
    res = np.linalg.norm(riccati_residual(A, B, Qx, R, P))
    if res > RESIDUAL_TOL * max(1.0, np.linalg.norm(P)) or not np.all(np.isfinite(P)):
        raise SolverError(f"dlqr: Riccati residual {res:.3e}; (A, B) may not be stabilizable")
    if _spectral_radius(Acl) >= 1.0 - 1e-9:
        raise SolverError("dlqr: closed loop not stable; (A, B) not stabilizable")
    return K, P


def riccati_residual(A, B, Qx, R, P):
    BtPA = B.T @ P @ A
    return A.T @ P @ A - P - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Qx


def spectral_radius(M) -> float:
    return _spectral_radius(np.atleast_2d(np.asarray(M, dtype=float)))
