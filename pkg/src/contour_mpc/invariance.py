"""Backward reachable sets and switch control-invariant set families.

A family assigns each mode ``m`` a set ``C_m`` that is control invariant for
mode ``m`` and from which every successor ``n`` can be entered safely, i.e.
``C_m`` lies in the ``d_n``-step backward reachable set of ``C_n`` inside
``S_n``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .numsolve import LpProblem, Status, solve_lp
from .polytope import (
    Polytope,
    PolytopeError,
    _cheb_lp,
    contains_point,
    contains_set,
    format_polytope,
    intersect,
    is_empty,
    minkowski_segment,
    project,
    read_polytope_block,
    remove_redundant,
    sample_uniform,
    witness_outside,
)

logger = logging.getLogger(__name__)

MAX_ITER = 200


class InvarianceError(RuntimeError):
    def __init__(self, msg, mode=None, term=None, converged=False, partial=None):
        super().__init__(msg)
        self.mode = mode
        self.term = term
        self.converged = converged
        self.partial = partial


# --- model containers -------------------------------------------------------

def _uncontrollable_modes(A, B, tol=1e-9):
    """Eigenvalues with |lambda| >= 1 that fail the PBH rank test."""
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1 - 1e-12:
            continue
        M = np.hstack([A - lam * np.eye(n), B])
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            bad.append(lam)
    return bad


def is_stabilizable(A, B) -> bool:
    return not _uncontrollable_modes(np.asarray(A, float), np.asarray(B, float))


def is_detectable(A, C) -> bool:
    A = np.asarray(A, float)
    return not _uncontrollable_modes(A.T, np.asarray(C, float).T)


@dataclass
class ModeModel:
    """Discrete-time dynamics ``x+ = A x + B u``, ``y = C x`` of one mode.

    ``S`` is the feasible set and ``region`` the scheduling interval that
    activates the mode (both optional for purely algebraic use).
    """

    mode_id: Hashable
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    S: Polytope | None = None
    region: Polytope | None = None
    check: bool = True

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.A.shape[0], -1)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.C.shape[1] != n:
            raise ValueError(f"mode {self.mode_id}: inconsistent A/B/C shapes")
        if self.S is not None and self.S.dim != n:
            raise ValueError(f"mode {self.mode_id}: S has dim {self.S.dim}, state has {n}")
        if self.check:
            if not is_stabilizable(self.A, self.B):
                raise ValueError(f"mode {self.mode_id}: (A, B) is not stabilizable")
            if not is_detectable(self.A, self.C):
                raise ValueError(f"mode {self.mode_id}: (A, C) is not detectable")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]


@dataclass
class ModeGraph:
    modes: list
    edges: list
    dwell: dict

    def __post_init__(self):
        known = set(self.modes)
        if len(known) != len(self.modes):
            raise ValueError("duplicate mode ids")
        for m, n in self.edges:
            if m not in known or n not in known:
                raise ValueError(f"edge ({m}, {n}) names an unknown mode")
        for m in self.modes:
            d = self.dwell.get(m)
            if d is None or int(d) != d or d < 1:
                raise ValueError(f"mode {m}: dwell bound must be an integer >= 1, got {d}")

    def successors(self, m) -> list:
        return [n for (a, n) in self.edges if a == m and n != m]

    def predecessors(self, n) -> list:
        return [a for (a, b) in self.edges if b == n and a != n]

    def has_edge(self, m, n) -> bool:
        return (m, n) in self.edges

    def topological_order(self):
        """Modes ordered so every edge points forward, or None if cyclic."""
        indeg = {m: 0 for m in self.modes}
        for m, n in set(self.edges):
            if m != n:
                indeg[n] += 1
        ready = [m for m in self.modes if indeg[m] == 0]
        order = []
        while ready:
            m = ready.pop(0)
            order.append(m)
            for n in self.successors(m):
                indeg[n] -= 1
                if indeg[n] == 0:
                    ready.append(n)
        return order if len(order) == len(self.modes) else None


# --- reachability -----------------------------------------------------------

def box_bounds(U: Polytope):
    """``(lo, hi)`` when ``U`` is an axis-aligned box, else None."""
    A, b = U.A, U.b
    d = U.dim
    lo, hi = np.full(d, -np.inf), np.full(d, np.inf)
    for row, rhs in zip(A, b):
        k = np.flatnonzero(np.abs(row) > 1e-12)
        if k.size != 1:
            return None
        k = int(k[0])
        if row[k] > 0:
            hi[k] = min(hi[k], rhs / row[k])
        else:
            lo[k] = max(lo[k], rhs / row[k])
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return None
    return lo, hi


def backward_reachable(model: ModeModel, S: Polytope, I: Polytope, U: Polytope) -> Polytope:
    """``{x in S : exists u in U with A x + B u in I}``.

    The input variables are eliminated by Fourier-Motzkin.  For a box ``U``
    they are eliminated one at a time from ``I`` alone (a segment Minkowski
    sum per input) before pulling back through ``A`` and meeting ``S``; other
    input sets use the full lifted system over ``(x, u)``.
    """
    A, B = model.A, model.B
    n, m = B.shape
    if I.dim != n or S.dim != n or U.dim != m:
        raise ValueError("dimension mismatch in backward_reachable")
    if is_empty(I) or is_empty(S) or is_empty(U):
        return Polytope.empty(n)
    bounds = box_bounds(U)
    if bounds is not None:
        lo, hi = bounds
        M = I
        for j in range(m):
            g = B[:, j]
            if not np.any(g):
                continue
            M = minkowski_segment(M, -g, lo[j], hi[j])
            if M._empty_marker:
                return Polytope.empty(n)
        return intersect(S, M.affine_preimage(A))
    lifted = Polytope(
        np.vstack([
            np.hstack([S.A, np.zeros((S.b.size, m))]),
            np.hstack([I.A @ A, I.A @ B]),
            np.hstack([np.zeros((U.b.size, n)), U.A]),
        ]),
        np.concatenate([S.b, I.b, U.b]),
        n + m,
    )
    return remove_redundant(project(lifted, list(range(n))))


def brs_ladder(model: ModeModel, S: Polytope, I: Polytope, U: Polytope, depth: int) -> list:
    """``[B^0, B^1, ...]`` with ``B^0 = I``, stopped at ``depth`` or at the
    first repeated level (all deeper levels then equal the last entry)."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    levels = [I]
    for _ in range(depth):
        nxt = backward_reachable(model, S, levels[-1], U)
        if nxt._empty_marker or is_empty(nxt):
            levels.append(Polytope.empty(I.dim))
            break
        if contains_set(levels[-1], nxt) and contains_set(nxt, levels[-1]):
            break
        levels.append(nxt)
    return levels


def ladder_level(levels: Sequence[Polytope], j: int) -> Polytope:
    return levels[min(j, len(levels) - 1)]


def backward_reachable_k(model: ModeModel, S: Polytope, I: Polytope, U: Polytope,
                         i: int) -> Polytope:
    """``i``-fold backward reachable set with ``S`` held fixed (``i = 0`` gives ``I``)."""
    if i < 0:
        raise ValueError("i must be >= 0")
    return ladder_level(brs_ladder(model, S, I, U, i), i)


# --- switch control-invariant family ----------------------------------------

@dataclass
class SwitchCiFamily:
    sets: dict
    iterations_used: int
    converged: bool
    ladders: dict = field(default_factory=dict)
    per_mode_iterations: dict = field(default_factory=dict)

    def __getitem__(self, m) -> Polytope:
        return self.sets[m]

    def level(self, m, j: int) -> Polytope:
        """``B^j(S_m, C_m)``; falls back to ``C_m`` when no ladder is stored."""
        lad = self.ladders.get(m)
        if not lad:
            return self.sets[m]
        return ladder_level(lad, j)

    def to_text(self) -> str:
        out = [f"family {len(self.sets)} {self.iterations_used} {int(self.converged)}\n"]
        for m, P in self.sets.items():
            out.append(f"mode {m}\n")
            out.append(format_polytope(P))
        return "".join(out)

    def ladders_to_text(self) -> str:
        out = []
        for m, lad in self.ladders.items():
            out.append(f"ladder {m} {len(lad)}\n")
            out.extend(format_polytope(P) for P in lad)
        return "".join(out)


def _clean(lines):
    it = (ln.strip() for ln in lines)
    return (ln for ln in it if ln and not ln.startswith("#"))


def parse_family(lines, mode_type=str) -> SwitchCiFamily:
    it = _clean(lines)
    head = next(it).split()
    if head[0] != "family" or len(head) != 4:
        raise PolytopeError(f"bad family header {' '.join(head)!r}")
    k, iters, conv = int(head[1]), int(head[2]), bool(int(head[3]))
    sets = {}
    for _ in range(k):
        tag = next(it).split(maxsplit=1)
        if tag[0] != "mode":
            raise PolytopeError(f"expected 'mode <id>', got {' '.join(tag)!r}")
        sets[mode_type(tag[1])] = read_polytope_block(next(it), it)
    return SwitchCiFamily(sets, iters, conv)


def parse_ladders(lines, mode_type=str) -> dict:
    it = _clean(lines)
    out = {}
    for head in it:
        tag = head.split()
        if tag[0] != "ladder" or len(tag) != 3:
            raise PolytopeError(f"bad ladder header {head!r}")
        out[mode_type(tag[1])] = [read_polytope_block(next(it), it) for _ in range(int(tag[2]))]
    return out


def _empty_error(m, term, partial, it):
    msg = (f"no switch CI family exists under given dwell times: mode {m} became empty "
           f"at iteration {it} ({term})")
    return InvarianceError(msg, mode=m, term=term, converged=False, partial=partial)


def _update(model, S_m, I_m, U, targets, m, partial, it):
    """One Algorithm-style update ``I ∩ B_m(S_m, I) ∩ targets``."""
    own = backward_reachable(model, S_m, I_m, U)
    nxt = intersect(I_m, own)
    if nxt._empty_marker or is_empty(nxt):
        raise _empty_error(m, "own backward reachable set", partial, it)
    for n, T in targets:
        nxt = intersect(nxt, T)
        if nxt._empty_marker or is_empty(nxt):
            raise _empty_error(m, f"entry set of successor {n}", partial, it)
    return nxt


def _assert_shrinks(new, old, m):
    # cheap necessary check; the update intersects with the previous iterate
    c, _ = _cheb_lp(new)
    assert c is not None and contains_point(old, c, 1e-7), f"iterate of mode {m} grew"


def switch_ci_sets(models: Sequence[ModeModel], graph: ModeGraph, U: Polytope,
                   max_iter: int = MAX_ITER, schedule: str = "auto",
                   keep_ladders: bool = True) -> SwitchCiFamily:
    """Greatest switch control-invariant family contained in the feasible sets.

    ``schedule="jacobi"`` updates every mode from the previous iterate.  When
    the graph without self-loops is acyclic, ``"auto"`` instead settles modes
    in reverse topological order: a mode's successors are already final, so
    their entry sets are computed once.  Both reach the same fixpoint.
    """
    byid = {mm.mode_id: mm for mm in models}
    if set(byid) != set(graph.modes):
        raise ValueError("models and graph list different modes")
    for mm in models:
        if mm.S is None or is_empty(mm.S):
            raise ValueError(f"mode {mm.mode_id}: feasible set is empty or missing")
    order = graph.topological_order() if schedule == "auto" else None
    if schedule not in ("auto", "jacobi"):
        raise ValueError(f"unknown schedule {schedule!r}")
    if order is None:
        return _jacobi(byid, graph, U, max_iter, keep_ladders)
    return _reverse_topological(byid, graph, U, max_iter, order, keep_ladders)


def _reverse_topological(byid, graph, U, max_iter, order, keep_ladders):
    sets, ladders, counts = {}, {}, {}
    for m in reversed(order):
        mm = byid[m]
        targets = []
        for n in graph.successors(m):
            lad = ladders[n]
            targets.append((n, ladder_level(lad, graph.dwell[n])))
        I = mm.S
        it = 0
        while True:
            it += 1
            if it > max_iter:
                raise InvarianceError(
                    f"mode {m} did not converge within {max_iter} iterations",
                    mode=m, converged=False, partial={**sets, m: I})
            nxt = _update(mm, mm.S, I, U, targets, m, dict(sets), it)
            _assert_shrinks(nxt, I, m)
            done = contains_set(nxt, I)
            I = nxt
            if done:
                break
        sets[m] = I
        counts[m] = it
        depth = graph.dwell[m] if graph.predecessors(m) or keep_ladders else 0
        ladders[m] = brs_ladder(mm, mm.S, I, U, depth)
        logger.info("mode %s: %d iterations, %d facets, ladder depth %d",
                    m, it, I.b.size, len(ladders[m]) - 1)
    fam = SwitchCiFamily({m: sets[m] for m in graph.modes}, max(counts.values()), True,
                         {m: ladders[m] for m in graph.modes} if keep_ladders else {},
                         counts)
    return fam


def _jacobi(byid, graph, U, max_iter, keep_ladders):
    I = {m: byid[m].S for m in graph.modes}
    entry_cache: dict = {}
    for it in range(1, max_iter + 1):
        entries = {}
        for n in graph.modes:
            if not graph.predecessors(n):
                continue
            key = (n, id(I[n]))
            if key not in entry_cache or entry_cache[key][0] is not I[n]:
                entry_cache[key] = (I[n], backward_reachable_k(byid[n], byid[n].S, I[n], U,
                                                               graph.dwell[n]))
            entries[n] = entry_cache[key][1]
        new = {}
        for m in graph.modes:
            targets = [(n, entries[n]) for n in graph.successors(m)]
            new[m] = _update(byid[m], byid[m].S, I[m], U, targets, m, dict(I), it)
            _assert_shrinks(new[m], I[m], m)
        stable = {m: contains_set(new[m], I[m]) for m in graph.modes}
        for m in graph.modes:
            # keep the old object for unchanged modes so cached entry sets stay valid
            if not stable[m]:
                I[m] = new[m]
        if all(stable.values()):
            ladders = {}
            if keep_ladders:
                ladders = {m: brs_ladder(byid[m], byid[m].S, I[m], U, graph.dwell[m])
                           for m in graph.modes}
            return SwitchCiFamily(dict(I), it, True, ladders, {m: it for m in graph.modes})
    raise InvarianceError(f"switch CI iteration did not converge within {max_iter} iterations",
                          converged=False, partial=dict(I))


# --- certification ----------------------------------------------------------

@dataclass
class Violation:
    kind: str
    mode: Hashable
    edge: tuple | None
    witness: np.ndarray | None
    detail: str = ""


@dataclass
class VerifyReport:
    violations: list
    samples_checked: int
    edges_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


def one_step_input(model: ModeModel, x, target: Polytope, U: Polytope):
    """Some ``u in U`` with ``A x + B u in target`` (None if none exists)."""
    Ax = model.A @ np.asarray(x, dtype=float)
    G = np.vstack([target.A @ model.B, U.A])
    h = np.concatenate([target.b - target.A @ Ax, U.b])
    res = solve_lp(LpProblem(np.zeros(model.n_u), G, h))
    if res.status is Status.OPTIMAL:
        return res.x
    if res.status is Status.INFEASIBLE:
        return None
    raise PolytopeError(f"controllability LP failed: {res.status.value}")


def _edge_check(args):
    """Exact test of ``C_m ⊆ B_n^{d_n}(S_n, C_n)``.

    Requires ``C_n ⊆ B_n(S_n, C_n)`` (checked separately), which makes the
    ladder ``B^0 ⊆ B^1 ⊆ ...`` nested, so the walk may stop at the first
    level holding ``C_m`` or at a repeated level.
    """
    model_n, C_n, C_m, U, d_n, m, n = args
    L = C_n
    for j in range(d_n + 1):
        if contains_set(L, C_m):
            return None
        if j == d_n:
            break
        nxt = backward_reachable(model_n, model_n.S, L, U)
        if contains_set(L, nxt):
            break
        L = nxt
    w = witness_outside(L, C_m)
    return Violation("edge inclusion", m, (m, n), w,
                     f"C_{m} is not inside the {d_n}-step backward reachable set of C_{n}")


def _invariance_check(model, C, U):
    """Exact one-step invariance ``C ⊆ B(S, C)``; a Violation or None."""
    B1 = backward_reachable(model, model.S if model.S is not None else C, C, U)
    if contains_set(B1, C):
        return None
    return Violation("invariance", model.mode_id, None, witness_outside(B1, C),
                     f"C_{model.mode_id} is not control invariant")


def verify_family(family: SwitchCiFamily, models: Sequence[ModeModel], graph: ModeGraph,
                  U: Polytope, n_samples: int = 1000, seed: int = 0,
                  workers: int = 1) -> VerifyReport:
    """Check the defining conditions of a switch control-invariant family.

    Invariance (``C_m ⊆ B_m(S_m, C_m)``) and edge inclusions are decided
    exactly by containment LPs; invariance is also spot-checked with the
    one-step LP on ``n_samples`` points per mode.
    """
    byid = {mm.mode_id: mm for mm in models}
    rng = np.random.default_rng(seed)
    out = []
    for m in graph.modes:
        C = family.sets.get(m)
        if C is None or is_empty(C):
            out.append(Violation("empty", m, None, None, f"C_{m} is empty or missing"))
            continue
        if byid[m].S is not None and not contains_set(byid[m].S, C):
            out.append(Violation("feasibility", m, None, witness_outside(byid[m].S, C),
                                 f"C_{m} leaves S_{m}"))
    bad = {v.mode for v in out if v.kind == "empty"}
    for m in graph.modes:
        if m not in bad:
            v = _invariance_check(byid[m], family.sets[m], U)
            if v is not None:
                out.append(v)
                bad.add(m)
    samples = 0
    for m in graph.modes:
        if m in bad or n_samples <= 0:
            continue
        pts = sample_uniform(family.sets[m], n_samples, seed=int(rng.integers(2**31)))
        for x in pts:
            samples += 1
            if one_step_input(byid[m], x, family.sets[m], U) is None:
                out.append(Violation("invariance", m, None, x,
                                     f"no admissible input keeps the state in C_{m}"))
                break
    jobs = [(byid[n], family.sets[n], family.sets[m], U, graph.dwell[n], m, n)
            for m in graph.modes for n in graph.successors(m)
            if m not in bad and n not in bad]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_edge_check, jobs))
    else:
        results = [_edge_check(j) for j in jobs]
    out.extend(r for r in results if r is not None)
    return VerifyReport(out, samples, len(jobs))
