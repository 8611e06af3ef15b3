"""Contour geometry: contouring error, linear feasible sets and the polygonal
annulus that inner-approximates a tolerance band around a circle.

Points in output space are ``(x_e, y_e)`` in metres.  State-space sets are
obtained by pulling output polytopes back through an output map ``C``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .polytope import (
    Polytope,
    PolytopeError,
    contains_point,
    format_polytope,
    intersect,
    is_empty,
    read_polytope_block,
)

COMPARE_SLACK = 1e-9


class ContourError(ValueError):
    pass


@dataclass(frozen=True)
class Tolerance:
    eps_c: float

    def __post_init__(self):
        if not (self.eps_c > 0 and math.isfinite(self.eps_c)):
            raise ContourError(f"eps_c must be positive, got {self.eps_c}")


@dataclass(frozen=True)
class Line:
    """Line ``a x + b y + c = 0``; ``start``/``end`` bound it when used as a path."""

    a: float
    b: float
    c: float
    start: tuple[float, float] | None = None
    end: tuple[float, float] | None = None
    time_window: tuple[int, int] | None = None

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise ContourError("line normal (a, b) must be non-zero")

    @classmethod
    def through(cls, p0, p1, time_window=None) -> "Line":
        (x0, y0), (x1, y1) = p0, p1
        a, b = -(y1 - y0), x1 - x0
        if a == 0 and b == 0:
            raise ContourError("line endpoints coincide")
        c = -(a * x0 + b * y0)
        return cls(float(a), float(b), float(c), (float(x0), float(y0)),
                   (float(x1), float(y1)), time_window)

    @property
    def norm(self) -> float:
        return math.hypot(self.a, self.b)

    def distance(self, point) -> float:
        x, y = point
        return abs(self.a * x + self.b * y + self.c) / self.norm

    # path helpers, valid only when endpoints are set
    def _ends(self):
        if self.start is None or self.end is None:
            raise ContourError("line has no endpoints")
        return np.asarray(self.start, float), np.asarray(self.end, float)

    @property
    def length(self) -> float:
        p0, p1 = self._ends()
        return float(np.linalg.norm(p1 - p0))

    def point_at(self, s: float) -> np.ndarray:
        p0, p1 = self._ends()
        return p0 + (p1 - p0) * (s / self.length)

    def tangent_at(self, s: float) -> np.ndarray:
        p0, p1 = self._ends()
        return (p1 - p0) / self.length

    @property
    def curvature(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Arc:
    """Circular arc, counter-clockwise when ``angle_end > angle_start``."""

    x_o: float
    y_o: float
    R_c: float
    angle_start: float = 0.0
    angle_end: float = 2 * math.pi
    time_window: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.R_c > 0:
            raise ContourError(f"arc radius must be positive, got {self.R_c}")
        if self.angle_end == self.angle_start:
            raise ContourError("arc has zero angular extent")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x_o, self.y_o])

    @property
    def sweep(self) -> float:
        return self.angle_end - self.angle_start

    @property
    def full(self) -> bool:
        return abs(self.sweep) >= 2 * math.pi - 1e-12

    def _in_window(self, ang: float) -> bool:
        if self.full:
            return True
        lo, hi = sorted((self.angle_start, self.angle_end))
        t = (ang - lo) % (2 * math.pi)
        return t <= (hi - lo) + 1e-12

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return self.point_at(0.0), self.point_at(self.length)

    def distance(self, point) -> float:
        p = np.asarray(point, dtype=float) - self.center
        r = math.hypot(p[0], p[1])
        if r == 0 or self._in_window(math.atan2(p[1], p[0])):
            return abs(self.R_c - r)
        e0, e1 = self.endpoints()
        q = np.asarray(point, dtype=float)
        return float(min(np.linalg.norm(q - e0), np.linalg.norm(q - e1)))

    @property
    def length(self) -> float:
        return abs(self.sweep) * self.R_c

    def angle_at(self, s: float) -> float:
        return self.angle_start + math.copysign(s / self.R_c, self.sweep)

    def point_at(self, s: float) -> np.ndarray:
        a = self.angle_at(s)
        return self.center + self.R_c * np.array([math.cos(a), math.sin(a)])

    def tangent_at(self, s: float) -> np.ndarray:
        a = self.angle_at(s)
        d = math.copysign(1.0, self.sweep)
        return d * np.array([-math.sin(a), math.cos(a)])

    @property
    def curvature(self) -> float:
        return 1.0 / self.R_c


ContourSegment = Union[Line, Arc]


def contouring_error(point, contour: Sequence[ContourSegment]) -> float:
    """Shortest distance from ``point`` to any segment of ``contour``."""
    if not contour:
        raise ContourError("contour is empty")
    return min(seg.distance(point) for seg in contour)


# --- state-space pullback ---------------------------------------------------

def pull_back(P_out: Polytope, C, X: Polytope | None = None) -> Polytope:
    """``{x : C x in P_out}``, intersected with ``X`` when given."""
    C = np.asarray(C, dtype=float)
    if C.shape[0] != P_out.dim:
        raise ContourError(f"output map has {C.shape[0]} rows, set has dim {P_out.dim}")
    P = P_out.affine_preimage(C)
    return P if X is None else intersect(X, P)


def linear_feasible_set(line: Line, tol: Tolerance, X: Polytope | None = None,
                        C=None) -> Polytope:
    """States whose output lies within ``eps_c`` of ``line``.

    Without ``C`` the result lives in output space.
    """
    n = np.array([line.a, line.b])
    w = tol.eps_c * line.norm
    P_out = Polytope(np.vstack([n, -n]), [w - line.c, w + line.c], 2)
    if C is None:
        return P_out if X is None else intersect(X, P_out)
    return pull_back(P_out, C, X)


# --- polygonal annulus -------------------------------------------------------

def polygon_side_counts(R_c: float, tol: Tolerance, slack: float = COMPARE_SLACK,
                        n_max: int = 100_000) -> tuple[int, int]:
    """Fewest inner/outer polygon sides whose annulus holds the circle.

    The inner polygon has apothem ``R_c - eps`` and vertex radius ``l_v``; the
    outer polygon has vertex radius ``R_c + eps`` and apothem ``l_s``.  Every
    comparison ``u <= v`` is evaluated as ``u <= v + slack``.
    """
    eps = tol.eps_c
    if not R_c > 0:
        raise ContourError("R_c must be positive")
    if eps >= R_c:
        raise ContourError(f"eps_c = {eps} must be smaller than R_c = {R_c}")

    def l_v(n):
        return (R_c - eps) / math.cos(math.pi / n)

    def l_s(n):
        return (R_c + eps) * math.cos(math.pi / n)

    n_i = 3
    while l_v(n_i) > R_c + slack:
        n_i += 1
        if n_i > n_max:
            raise ContourError("no inner side count found")
    lv = l_v(n_i)
    n_o = 3
    while lv > l_s(n_o) + slack:
        n_o += 1
        if n_o > n_max:
            raise ContourError("no outer side count found")
    while not (lv <= R_c + slack and R_c <= l_s(n_o) + slack):
        n_o += 1
        if n_o > n_max:
            raise ContourError("circle never contained")
    return n_i, n_o


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


@dataclass
class AnnulusApprox:
    """Sector partition of the region between two regular polygons.

    Sector ``p`` (0-based here, reported 1-based) sits on inner edge ``p``,
    whose outward normal points at angle ``phase + 2 pi p / n_i``.
    """

    R_c: float
    eps_c: float
    center: np.ndarray
    n_i: int
    n_o: int
    phase: float
    sectors: list = field(default_factory=list)
    caps: list = field(default_factory=list)
    state_sectors: list | None = None

    @property
    def l_v(self) -> float:
        return (self.R_c - self.eps_c) / math.cos(math.pi / self.n_i)

    @property
    def l_s(self) -> float:
        return (self.R_c + self.eps_c) * math.cos(math.pi / self.n_o)

    def edge_angle(self, p: int) -> float:
        return self.phase + 2 * math.pi * p / self.n_i

    def vertex_angles(self, p: int) -> tuple[float, float]:
        h = math.pi / self.n_i
        a = self.edge_angle(p)
        return a - h, a + h

    def to_text(self) -> str:
        head = (f"annulus {self.R_c:.17g} {self.eps_c:.17g} {self.n_i} {self.n_o} "
                f"{self.phase:.17g}\n")
        return head + "".join(format_polytope(s) for s in self.sectors)


def outer_polygon(R_c, eps_c, n_o, phase=0.0, center=(0.0, 0.0)) -> Polytope:
    c = np.asarray(center, dtype=float)
    l_s = (R_c + eps_c) * math.cos(math.pi / n_o)
    N = np.array([_unit(phase + 2 * math.pi * q / n_o) for q in range(n_o)])
    return Polytope(N, l_s + N @ c, 2)


def circular_feasible_sectors(arc: Arc, tol: Tolerance, n_i: int, n_o: int,
                              phase: float = 0.0, X: Polytope | None = None,
                              C=None) -> AnnulusApprox:
    """Build the ``n_i`` convex sectors of the polygonal annulus around ``arc``.

    A sector is the outside of one inner edge, cut by the two rays from the
    center through that edge's vertices, inside every outer edge.  The cap of
    a sector drops the two radial cuts; it is still inside the tolerance band.
    """
    R, eps = arc.R_c, tol.eps_c
    if eps >= R:
        raise ContourError(f"eps_c = {eps} must be smaller than R_c = {R}")
    if n_i < 3 or n_o < 3:
        raise ContourError("polygons need at least three sides")
    ap = AnnulusApprox(R, eps, arc.center, int(n_i), int(n_o), float(phase))
    if ap.l_v > ap.l_s + COMPARE_SLACK:
        raise ContourError(f"inner vertices (l_v = {ap.l_v:.6g}) reach beyond the outer "
                           f"polygon (l_s = {ap.l_s:.6g}); increase n_o")
    c = arc.center
    outer = outer_polygon(R, eps, n_o, phase, c)
    for p in range(n_i):
        n_p = _unit(ap.edge_angle(p))
        a0, a1 = ap.vertex_angles(p)
        inner = Polytope([-n_p], [-(R - eps) - n_p @ c], 2)
        cap = intersect(inner, outer, reduce=False)
        # counter-clockwise of the ray at a0, clockwise of the ray at a1
        t0, t1 = _unit(a0 + math.pi / 2), _unit(a1 + math.pi / 2)
        rays = Polytope(np.vstack([-t0, t1]), [-(t0 @ c), t1 @ c], 2)
        sector = intersect(cap, rays, reduce=False)
        if is_empty(sector):
            raise ContourError(f"sector {p + 1} is empty")
        ap.sectors.append(sector)
        ap.caps.append(cap)
    if C is not None:
        ap.state_sectors = []
        for p, s in enumerate(ap.sectors):
            S = pull_back(s, C, X)
            if is_empty(S):
                raise ContourError(f"sector {p + 1} is empty after intersecting with X")
            ap.state_sectors.append(S)
    return ap


def active_sector(point, approx: AnnulusApprox, tol: float = 1e-9) -> int:
    """1-based index of the lowest sector containing ``point``."""
    for p, s in enumerate(approx.sectors):
        if contains_point(s, point, tol):
            return p + 1
    raise ContourError(f"point {tuple(np.round(point, 6))} lies in no sector")


def sector_of_angle(angle: float, approx: AnnulusApprox) -> int:
    """1-based sector index whose angular window holds ``angle``.

    Shared boundaries go to the lower index.
    """
    w = 2 * math.pi / approx.n_i
    t = (angle - approx.phase + math.pi / approx.n_i) % (2 * math.pi)
    p = int(math.floor(t / w + 1e-12)) % approx.n_i
    # on a boundary the earlier of the two sectors wins
    if p > 0 and abs(t - p * w) <= 1e-12:
        p -= 1
    return p + 1


def parse_annulus(lines) -> AnnulusApprox:
    it = (ln.strip() for ln in lines)
    it = (ln for ln in it if ln and not ln.startswith("#"))
    head = next(it).split()
    if head[0] != "annulus" or len(head) != 6:
        raise PolytopeError(f"bad annulus header {' '.join(head)!r}")
    R, eps, n_i, n_o, phase = float(head[1]), float(head[2]), int(head[3]), int(head[4]), float(head[5])
    ap = AnnulusApprox(R, eps, np.zeros(2), n_i, n_o, phase)
    for _ in range(n_i):
        ap.sectors.append(read_polytope_block(next(it), it))
    return ap
