"""H-representation polytopes {x : A x <= b}.

Only the halfspace form is stored.  Rows are normalized to unit length on
construction so every tolerance in this module is a Euclidean distance.
"""
from __future__ import annotations

import io
import logging
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

from .numsolve import LpProblem, Status, solve_lp

logger = logging.getLogger(__name__)

MEMBER_TOL = 1e-9
CONTAIN_SLACK = 1e-9
FM_ROW_CAP = 20_000
_ZERO_ROW = 1e-12


class PolytopeError(ValueError):
    pass


class ProjectionBlowup(PolytopeError):
    pass


class Polytope:
    """Convex polyhedron ``{x : A x <= b}`` with unit-norm facet normals.

    Instances are treated as immutable; the arrays are flagged read-only.
    """

    __slots__ = ("A", "b", "dim", "_empty_marker", "_cheb")

    def __init__(self, A, b, dim: int | None = None, *, normalize: bool = True):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.size == 0:
            if dim is None:
                dim = A.shape[1] if A.ndim == 2 else 0
            A = np.zeros((0, dim))
            b = np.zeros(0)
        A = np.atleast_2d(A)
        if dim is None:
            dim = A.shape[1]
        if A.shape != (b.size, dim):
            raise PolytopeError(f"A has shape {A.shape}, b has {b.size} entries, dim={dim}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise PolytopeError("non-finite polytope data")
        empty = False
        if normalize and b.size:
            norms = np.linalg.norm(A, axis=1)
            zero = norms <= _ZERO_ROW
            if np.any(zero & (b < -MEMBER_TOL)):
                empty = True
            keep = ~zero
            A = A[keep] / norms[keep, None]
            b = b[keep] / norms[keep]
        A = np.ascontiguousarray(A)
        b = np.ascontiguousarray(b)
        A.flags.writeable = False
        b.flags.writeable = False
        self.A = A
        self.b = b
        self.dim = int(dim)
        self._empty_marker = empty
        self._cheb = None

    # constructors ---------------------------------------------------------
    @classmethod
    def from_box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        d = lo.size
        A = np.vstack([np.eye(d), -np.eye(d)])
        return cls(A, np.concatenate([hi, -lo]))

    @classmethod
    def empty(cls, dim: int) -> "Polytope":
        return cls(np.zeros((1, dim)), [-1.0])

    @classmethod
    def full(cls, dim: int) -> "Polytope":
        return cls(np.zeros((0, dim)), np.zeros(0), dim)

    # conveniences ---------------------------------------------------------
    @property
    def n_constraints(self) -> int:
        return self.b.size

    def __repr__(self):
        tag = " (marked empty)" if self._empty_marker else ""
        return f"Polytope(dim={self.dim}, rows={self.b.size}{tag})"

    def __and__(self, other: "Polytope") -> "Polytope":
        return intersect(self, other)

    def __contains__(self, x) -> bool:
        return contains_point(self, x)

    def with_rows(self, A, b) -> "Polytope":
        """Stack extra rows without any redundancy processing."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.size == 0:
            return self
        return _stack([self, Polytope(A, b, self.dim)])

    def affine_preimage(self, M, t=None) -> "Polytope":
        """Return ``{x : M x + t in self}``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != self.dim:
            raise PolytopeError(f"map has {M.shape[0]} outputs, polytope dim is {self.dim}")
        b = self.b if t is None else self.b - self.A @ np.asarray(t, dtype=float)
        out = Polytope(self.A @ M, b, M.shape[1])
        out._empty_marker = out._empty_marker or self._empty_marker
        return out

    def translate(self, t) -> "Polytope":
        t = np.asarray(t, dtype=float)
        out = Polytope(self.A, self.b + self.A @ t, self.dim, normalize=False)
        out._empty_marker = self._empty_marker
        return out

    def scale(self, factor: float, center=None) -> "Polytope":
        """Homothety about ``center`` (origin by default)."""
        if factor <= 0:
            raise PolytopeError("scale factor must be positive")
        c = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        b = factor * (self.b - self.A @ c) + self.A @ c
        out = Polytope(self.A, b, self.dim, normalize=False)
        out._empty_marker = self._empty_marker
        return out


def _stack(polys: Sequence[Polytope]) -> Polytope:
    dim = polys[0].dim
    for P in polys:
        if P.dim != dim:
            raise PolytopeError(f"dimension mismatch: {P.dim} vs {dim}")
    A = np.vstack([P.A for P in polys])
    b = np.concatenate([P.b for P in polys])
    out = Polytope(A, b, dim, normalize=False)
    out._empty_marker = any(P._empty_marker for P in polys)
    return out


# --- basic predicates -------------------------------------------------------

def contains_point(P: Polytope, x, tol: float = MEMBER_TOL) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != P.dim:
        raise PolytopeError(f"point has dim {x.size}, polytope dim {P.dim}")
    if P._empty_marker:
        return False
    return bool(np.all(P.A @ x <= P.b + tol))


def contains_points(P: Polytope, X, tol: float = MEMBER_TOL) -> np.ndarray:
    """Vectorized membership for an (n, dim) array of points."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if P._empty_marker:
        return np.zeros(X.shape[0], dtype=bool)
    if P.b.size == 0:
        return np.ones(X.shape[0], dtype=bool)
    return np.all(X @ P.A.T <= P.b + tol, axis=1)


def _cheb_lp(P: Polytope):
    """Largest inscribed ball; returns (center, radius) or None if empty."""
    if P._cheb is not None:
        return P._cheb
    d = P.dim
    if P._empty_marker:
        P._cheb = (None, -np.inf)
        return P._cheb
    if P.b.size == 0:
        P._cheb = (np.zeros(d), np.inf)
        return P._cheb
    c = np.zeros(d + 1)
    c[-1] = -1.0
    G = np.hstack([P.A, np.ones((P.b.size, 1))])
    # cap the radius so unbounded sets still yield a finite interior point
    Gr = np.zeros((2, d + 1))
    Gr[0, -1] = 1.0
    Gr[1, -1] = -1.0
    res = solve_lp(LpProblem(c, np.vstack([G, Gr]), np.concatenate([P.b, [1e6, 1.0]])))
    if res.status is Status.INFEASIBLE:
        P._cheb = (None, -np.inf)
    elif res.status is Status.OPTIMAL:
        r = float(res.x[-1])
        # a negative optimal radius means the relaxed system is needed: empty
        P._cheb = (res.x[:d], r) if r >= -1e-12 else (None, r)
    else:
        raise PolytopeError(f"Chebyshev LP failed: {res.status.value} {res.message}")
    return P._cheb


def is_empty(P: Polytope) -> bool:
    """True iff no point satisfies every constraint (one feasibility LP)."""
    if P._empty_marker:
        return True
    if P.b.size == 0:
        return False
    if P._cheb is not None:
        return P._cheb[0] is None
    res = solve_lp(LpProblem(np.zeros(P.dim), P.A, P.b))
    if res.status is Status.INFEASIBLE:
        return True
    if res.status is Status.OPTIMAL:
        return False
    raise PolytopeError(f"emptiness LP failed: {res.status.value} {res.message}")


def bounding_box(P: Polytope) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounds; raises PolytopeError if P is empty or unbounded."""
    if is_empty(P):
        raise PolytopeError("bounding box of an empty polytope")
    d = P.dim
    lo, hi = np.empty(d), np.empty(d)
    for k in range(d):
        for sign, store in ((1.0, hi), (-1.0, lo)):
            c = np.zeros(d)
            c[k] = -sign
            res = solve_lp(LpProblem(c, P.A, P.b))
            if res.status is Status.UNBOUNDED:
                raise PolytopeError(f"polytope is unbounded along axis {k}")
            if res.status is not Status.OPTIMAL:
                raise PolytopeError(f"bounding-box LP failed: {res.status.value}")
            store[k] = res.x[k]
    return lo, hi


def is_bounded(P: Polytope) -> bool:
    try:
        bounding_box(P)
    except PolytopeError:
        return False
    return True


def chebyshev_center(P: Polytope) -> tuple[np.ndarray, float]:
    """Center and radius of the largest inscribed Euclidean ball."""
    center, radius = _cheb_lp(P)
    if center is None or radius < 0:
        raise PolytopeError("Chebyshev center of an empty polytope")
    if not is_bounded(P):
        raise PolytopeError("Chebyshev center of an unbounded polytope")
    return center.copy(), radius


def support(P: Polytope, direction) -> float:
    """max_{x in P} direction . x  (+inf when unbounded, -inf when empty)."""
    res = solve_lp(LpProblem(-np.asarray(direction, dtype=float), P.A, P.b))
    if res.status is Status.OPTIMAL:
        return -res.obj
    if res.status is Status.UNBOUNDED:
        return np.inf
    if res.status is Status.INFEASIBLE:
        return -np.inf
    raise PolytopeError(f"support LP failed: {res.status.value}")


# --- redundancy -------------------------------------------------------------

def _dedupe(A, b, decimals=11):
    """Drop rows sharing a normal (to ``decimals``), keeping the tightest offset."""
    if b.size <= 1:
        return A, b
    key = np.round(A, decimals)
    order = np.lexsort(np.vstack([b, key.T[::-1]]))
    key_sorted = key[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = np.any(key_sorted[1:] != key_sorted[:-1], axis=1)
    idx = np.sort(order[first])
    return A[idx], b[idx]


def _redundant_lp(A, b, candidates=None):
    """Mask of rows kept after sequential LP redundancy elimination."""
    m = b.size
    keep = np.ones(m, dtype=bool)
    rows = range(m) if candidates is None else candidates
    for i in rows:
        keep[i] = False
        others = np.flatnonzero(keep)
        G = np.vstack([A[others], A[i]])
        h = np.concatenate([b[others], [b[i] + 1.0]])
        res = solve_lp(LpProblem(-A[i], G, h))
        if res.status is Status.OPTIMAL and -res.obj <= b[i] + 1e-10:
            continue
        if res.status not in (Status.OPTIMAL, Status.UNBOUNDED):
            raise PolytopeError(f"redundancy LP failed: {res.status.value}")
        keep[i] = True
    return keep


def _hull_keep(A, b, center):
    """Irredundant rows via the polar dual: facets <-> extreme dual points."""
    s = b - A @ center
    pts = A / s[:, None]
    pts = np.vstack([pts, np.zeros(A.shape[1])])
    hull = ConvexHull(pts, qhull_options="Qt Q12")
    verts = hull.vertices[hull.vertices < A.shape[0]]
    keep = np.zeros(A.shape[0], dtype=bool)
    keep[verts] = True
    return keep


def _blocks(A):
    """Connected groups of coordinates linked by shared rows."""
    support = (np.abs(A) > _ZERO_ROW).astype(float)
    link = (support.T @ support) > 0
    n, labels = connected_components(link, directed=False)
    return [list(np.flatnonzero(labels == g)) for g in range(n)]


def remove_redundant(P: Polytope, method: str = "auto", interior=None) -> Polytope:
    """Return an equal polytope with every redundant constraint removed.

    Constraints that split into independent coordinate blocks are reduced
    block by block.
    """
    if P._empty_marker or P.b.size == 0 or P.dim < 2:
        return _remove_redundant(P, method, interior)
    blocks = _blocks(P.A)
    if len(blocks) == 1:
        return _remove_redundant(P, method, interior)
    support = np.abs(P.A) > _ZERO_ROW
    keep_rows = []
    for cols in blocks:
        rows = np.flatnonzero(support[:, cols].any(axis=1))
        if rows.size == 0:
            continue
        sub = Polytope(P.A[np.ix_(rows, cols)], P.b[rows], len(cols), normalize=False)
        hint = None if interior is None else np.asarray(interior, dtype=float)[cols]
        red = _remove_redundant(sub, method, hint)
        if red._empty_marker:
            return Polytope.empty(P.dim)
        A_full = np.zeros((red.b.size, P.dim))
        A_full[:, cols] = red.A
        keep_rows.append((A_full, red.b))
    if not keep_rows:
        return P
    return Polytope(np.vstack([a for a, _ in keep_rows]),
                    np.concatenate([b for _, b in keep_rows]), P.dim, normalize=False)


def _remove_redundant(P: Polytope, method: str = "auto", interior=None) -> Polytope:
    """Return an equal polytope with every redundant constraint removed.

    ``method="auto"`` finds irredundant rows through a convex hull of the polar
    dual about an interior point and falls back to one LP per row when the
    set is flat or qhull reports a degenerate input.  ``method="lp"`` always
    uses the LP test.  ``interior`` may supply a strictly interior point, which
    saves the Chebyshev LP on large inputs.
    """
    if P._empty_marker or P.b.size == 0:
        return P
    A, b = _dedupe(P.A, P.b)
    d = P.dim
    center = None
    if interior is not None and method == "auto" and d > 1:
        interior = np.asarray(interior, dtype=float)
        slack = b - A @ interior
        if slack.size and slack.min() > 1e-9:
            center, radius = interior, float(slack.min())
    if center is None:
        center, radius = _cheb_lp(Polytope(A, b, d, normalize=False))
    if center is None:
        return Polytope.empty(d)
    if d == 1:
        up, lo = A[:, 0] > 0, A[:, 0] < 0
        rows, rhs = [], []
        if up.any():
            rows.append([1.0]); rhs.append(float(np.min(b[up])))
        if lo.any():
            rows.append([-1.0]); rhs.append(float(np.min(b[lo])))
        return Polytope(np.array(rows).reshape(-1, 1), rhs, 1)
    keep = None
    if method == "auto" and radius > 1e-9 and b.size > d:
        try:
            keep = _hull_keep(A, b, center)
        except (QhullError, ValueError):
            keep = None
    if keep is None:
        keep = _redundant_lp(A, b)
    out = Polytope(A[keep], b[keep], d, normalize=False)
    if interior is None:
        out._cheb = (center, radius)
    return out


# --- set operations ---------------------------------------------------------

def intersect(P: Polytope, Q: Polytope, reduce: bool = True) -> Polytope:
    """Intersection; constraint lists are concatenated and then pruned."""
    if P.dim != Q.dim:
        raise PolytopeError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    S = _stack([P, Q])
    if not reduce:
        return S
    if is_empty(S):
        return Polytope.empty(P.dim)
    return remove_redundant(S)


def intersect_all(polys: Iterable[Polytope]) -> Polytope:
    polys = list(polys)
    S = _stack(polys)
    if is_empty(S):
        return Polytope.empty(polys[0].dim)
    return remove_redundant(S)


def contains_set(P: Polytope, Q: Polytope, slack: float = CONTAIN_SLACK) -> bool:
    """True iff Q is a subset of P, by maximizing P's facets over Q."""
    if P.dim != Q.dim:
        raise PolytopeError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if is_empty(Q):
        return True
    if P._empty_marker:
        return False
    rows = _rows_not_shared(P, Q, slack)
    if rows.size == 0:
        return True
    # cheap refutation: a known interior point of Q outside P
    cq, _ = _cheb_lp(Q)
    if cq is not None and np.any(P.A[rows] @ cq > P.b[rows] + slack):
        return False
    for i in rows:
        res = solve_lp(LpProblem(-P.A[i], Q.A, Q.b))
        if res.status is Status.UNBOUNDED:
            return False
        if res.status is not Status.OPTIMAL:
            raise PolytopeError(f"containment LP failed: {res.status.value}")
        if -res.obj > P.b[i] + slack:
            return False
    return True


def _rows_not_shared(P, Q, slack):
    """Rows of P not trivially implied by a parallel row of Q."""
    if Q.b.size == 0:
        return np.arange(P.b.size)
    dots = P.A @ Q.A.T
    par = dots >= 1.0 - 1e-12
    implied = np.any(par & (Q.b[None, :] <= P.b[:, None] + slack), axis=1)
    return np.flatnonzero(~implied)


def witness_outside(P: Polytope, Q: Polytope, slack: float = CONTAIN_SLACK):
    """A point of Q violating P by more than ``slack`` (None if Q is inside P)."""
    if is_empty(Q):
        return None
    for i in range(P.b.size):
        res = solve_lp(LpProblem(-P.A[i], Q.A, Q.b))
        if res.status is Status.OPTIMAL and -res.obj > P.b[i] + slack:
            return res.x
        if res.status is Status.UNBOUNDED:
            raise PolytopeError("Q unbounded along a facet of P; no finite witness")
    return None


def equal(P: Polytope, Q: Polytope, slack: float = CONTAIN_SLACK) -> bool:
    """Semantic set equality by mutual containment."""
    return contains_set(P, Q, slack) and contains_set(Q, P, slack)


def _fm_eliminate(A, b, j, cap):
    col = A[:, j]
    scale = 1e-12
    pos = np.flatnonzero(col > scale)
    neg = np.flatnonzero(col < -scale)
    zero = np.flatnonzero(np.abs(col) <= scale)
    n_new = pos.size * neg.size
    if zero.size + n_new > cap:
        raise ProjectionBlowup(
            f"Fourier-Motzkin step on coordinate {j} would create {zero.size + n_new} rows "
            f"(cap {cap}); try another elimination order or simplify the input"
        )
    Ap = A[pos] / col[pos, None]
    bp = b[pos] / col[pos]
    An = A[neg] / -col[neg, None]
    bn = b[neg] / -col[neg]
    comb_A = (Ap[:, None, :] + An[None, :, :]).reshape(-1, A.shape[1])
    comb_b = (bp[:, None] + bn[None, :]).reshape(-1)
    newA = np.vstack([A[zero], comb_A])
    newb = np.concatenate([b[zero], comb_b])
    return np.delete(newA, j, axis=1), newb


def project(P: Polytope, keep_dims: Sequence[int], max_rows: int = FM_ROW_CAP) -> Polytope:
    """Orthogonal projection onto ``keep_dims`` by Fourier-Motzkin elimination.

    Coordinates are eliminated one at a time, cheapest (fewest generated rows)
    first, with redundancy removal after every step.
    """
    keep_dims = [int(k) for k in keep_dims]
    if any(b <= a for a, b in zip(keep_dims, keep_dims[1:])):
        raise PolytopeError("keep_dims must be strictly increasing")
    if keep_dims and (keep_dims[0] < 0 or keep_dims[-1] >= P.dim):
        raise PolytopeError("keep_dims out of range")
    if is_empty(P):
        return Polytope.empty(len(keep_dims))
    Q = remove_redundant(P)
    center, radius = _cheb_lp(Q)
    # strict interior points survive elimination, so the projected center
    # serves every intermediate redundancy pass
    hint = center if radius > 1e-9 and np.isfinite(radius) else None
    labels = list(range(P.dim))
    A, b = Q.A, Q.b
    drop = [k for k in labels if k not in keep_dims]
    while drop:
        costs = []
        for k in drop:
            col = A[:, labels.index(k)]
            costs.append(np.sum(col > 1e-12) * np.sum(col < -1e-12) - np.sum(np.abs(col) > 1e-12))
        k = drop.pop(int(np.argmin(costs)))
        j = labels.index(k)
        A, b = _fm_eliminate(A, b, j, max_rows)
        labels.pop(j)
        if hint is not None:
            hint = np.delete(hint, j)
        R = remove_redundant(Polytope(A, b, len(labels)), interior=hint)
        if R._empty_marker:
            return Polytope.empty(len(keep_dims))
        A, b = R.A, R.b
    order = [labels.index(k) for k in keep_dims]
    return Polytope(A[:, order], b, len(keep_dims), normalize=False)


def _adjacent_pairs(A, b, center):
    """Candidate adjacent facet pairs ``(i, j)``, ``i < j``, from the polar hull.

    Facets of the polytope are vertices of its polar about ``center`` and two
    facets share a ridge exactly when their polar vertices share an edge.
    Every edge of the polar hull is an edge of some simplex of its
    triangulation, so the returned set is a superset of the true pairs.
    """
    s = b - A @ center
    pts = A / s[:, None]
    hull = ConvexHull(pts, qhull_options="Qt Q12")
    simp = hull.simplices
    k = simp.shape[1]
    pairs = [np.sort(simp[:, [u, v]], axis=1) for u in range(k) for v in range(u + 1, k)]
    return np.unique(np.vstack(pairs), axis=0)


def _minkowski_adjacent(A, b, g, lo, hi, center):
    """Rows of ``{A z <= b} + [lo, hi] g`` combining only adjacent facets."""
    sg = A @ g
    tiny = 1e-13 * np.linalg.norm(g)
    shifted = b + np.where(sg > 0, sg * hi, sg * lo)
    pairs = _adjacent_pairs(A, b, center)
    i, j = pairs[:, 0], pairs[:, 1]
    flip = sg[i] < sg[j]
    i, j = np.where(flip, j, i), np.where(flip, i, j)
    sel = (sg[i] > tiny) & (sg[j] < -tiny)
    i, j = i[sel], j[sel]
    wi, wj = -sg[j], sg[i]
    newA = wi[:, None] * A[i] + wj[:, None] * A[j]
    newb = wi * b[i] + wj * b[j]
    return np.vstack([A, newA]), np.concatenate([shifted, newb])


def minkowski_segment(P: Polytope, g, lo: float, hi: float, max_rows: int = 10**6) -> Polytope:
    """``P + {t g : lo <= t <= hi}``.

    This is one Fourier-Motzkin elimination of ``t`` from
    ``{(z, t) : A (z - t g) <= b, lo <= t <= hi}``.  Only rows touching the
    coordinates moved by ``g`` change, and only pairs of adjacent facets can
    produce a facet of the sum, so the generic all-pairs elimination is
    used just when the adjacency shortcut is unavailable (flat or unbounded
    input).
    """
    g = np.asarray(g, dtype=float).reshape(-1)
    d = P.dim
    if hi < lo:
        raise PolytopeError("segment bounds must satisfy lo <= hi")
    if P._empty_marker or is_empty(P):
        return Polytope.empty(d)
    if not np.any(g) or hi == lo:
        return P.translate(lo * g) if np.any(g) else P
    support = np.abs(P.A) > _ZERO_ROW
    cols = set(np.flatnonzero(np.abs(g) > 0).tolist())
    for blk in _blocks(P.A):
        if cols & set(blk):
            cols |= set(blk)
    cols = sorted(cols)
    rows = np.flatnonzero(support[:, cols].any(axis=1))
    other = np.setdiff1d(np.arange(P.b.size), rows)
    sub = Polytope(P.A[np.ix_(rows, cols)], P.b[rows], len(cols), normalize=False)
    gs = g[cols]
    out = None
    c, r = _cheb_lp(sub)
    if c is not None and 1e-9 < r < 1e5 and len(cols) > 1 and sub.b.size > len(cols):
        try:
            A2, b2 = _minkowski_adjacent(sub.A, sub.b, gs, lo, hi, c)
            red = _remove_redundant(Polytope(A2, b2, len(cols)), interior=c + 0.5 * (lo + hi) * gs)
            out = red
        except (QhullError, ValueError):
            out = None
    if out is None:
        A = np.hstack([sub.A, -(sub.A @ gs)[:, None]])
        tb = np.zeros((2, len(cols) + 1))
        tb[0, -1], tb[1, -1] = 1.0, -1.0
        lifted = Polytope(np.vstack([A, tb]), np.concatenate([sub.b, [hi, -lo]]), len(cols) + 1)
        out = project(lifted, list(range(len(cols))), max_rows=max_rows)
    if out._empty_marker:
        return Polytope.empty(d)
    A_full = np.zeros((out.b.size, d))
    A_full[:, cols] = out.A
    return Polytope(np.vstack([P.A[other], A_full]), np.concatenate([P.b[other], out.b]), d,
                    normalize=False)


# --- sampling ---------------------------------------------------------------

def sample_uniform(P: Polytope, n: int, seed: int = 0, burn: int = 200,
                   thin: int | None = None) -> np.ndarray:
    """Draw ``n`` points of a bounded polytope, deterministically per seed.

    Rejection from the bounding box is used when its acceptance rate is
    reasonable, hit-and-run from the Chebyshev center otherwise.
    """
    lo, hi = bounding_box(P)
    rng = np.random.default_rng(seed)
    d = P.dim
    if n <= 0:
        return np.zeros((0, d))
    probe = rng.uniform(lo, hi, size=(2000, d))
    rate = contains_points(P, probe, 0.0).mean()
    if rate >= 0.02:
        out = []
        got = 0
        batch = max(256, int(1.5 * n / rate))
        while got < n:
            X = rng.uniform(lo, hi, size=(batch, d))
            X = X[contains_points(P, X, 0.0)]
            out.append(X)
            got += X.shape[0]
        return np.vstack(out)[:n]
    x, _ = _cheb_lp(P)
    thin = thin if thin is not None else max(1, d)
    out = np.empty((n, d))
    A, b = P.A, P.b
    total = burn + n * thin
    k = 0
    for step in range(total):
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        Au = A @ u
        s = b - A @ x
        with np.errstate(divide="ignore"):
            t = s / Au
        tmax = np.min(t[Au > 1e-15], initial=np.inf)
        tmin = np.max(t[Au < -1e-15], initial=-np.inf)
        x = x + rng.uniform(max(tmin, -1e6), min(tmax, 1e6)) * u
        if step >= burn and (step - burn) % thin == thin - 1:
            out[k] = x
            k += 1
    return out


# --- text format ------------------------------------------------------------

def format_polytope(P: Polytope) -> str:
    """``dim m`` header then m lines ``a_1 ... a_dim b`` (17 significant digits)."""
    A, b = P.A, P.b
    if P._empty_marker:
        A, b = np.zeros((1, P.dim)), np.array([-1.0])
    buf = io.StringIO()
    buf.write(f"{P.dim} {b.size}\n")
    for row, rhs in zip(A, b):
        buf.write(" ".join(f"{v:.17g}" for v in row) + f" {rhs:.17g}\n")
    return buf.getvalue()


def parse_polytopes(lines: Iterable[str]) -> list[Polytope]:
    """Parse consecutive ``dim m`` blocks; blank and ``#`` lines are skipped."""
    it = (ln.strip() for ln in lines)
    it = (ln for ln in it if ln and not ln.startswith("#"))
    out = []
    for header in it:
        out.append(_parse_block(header, it))
    return out


def _parse_block(header: str, it) -> Polytope:
    try:
        dim, m = (int(t) for t in header.split())
    except ValueError as exc:
        raise PolytopeError(f"bad polytope header {header!r}") from exc
    rows = np.empty((m, dim + 1))
    for i in range(m):
        try:
            vals = [float(t) for t in next(it).split()]
        except StopIteration as exc:
            raise PolytopeError("truncated polytope block") from exc
        if len(vals) != dim + 1:
            raise PolytopeError(f"row {i} has {len(vals)} numbers, expected {dim + 1}")
        rows[i] = vals
    return Polytope(rows[:, :dim], rows[:, dim], dim)


def read_polytope_block(header: str, it) -> Polytope:
    """Parse one block given its header line and an iterator of the rest."""
    return _parse_block(header, it)
