"""Convex polyhedra in small dimension.

A :class:`Polytope` keeps both representations: a minimal vertex list and a
list of halfspaces ``w . p <= b`` with unit normals.  Unbounded directions are
recorded as recession rays; ``downward_closed[i]`` adds the ray ``-e_i``.

Facet enumeration uses the double-description method on the polar cone.  The
distance from a point to a polyhedron given by generators is computed with a
nonnegative least-squares formulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import qr

from .errors import DimensionTooHigh

MAX_DIM = 6
TOL = 1e-9


@dataclass(frozen=True)
class ErrorBox:
    down: tuple[float, ...]
    up: tuple[float, ...]

    def __post_init__(self):
        if len(self.down) != len(self.up):
            raise ValueError("error box sides differ in length")
        if any(x < 0 for x in self.down + self.up):
            raise ValueError("error box entries must be nonnegative")

    @classmethod
    def zero(cls, d: int) -> "ErrorBox":
        return cls((0.0,) * d, (0.0,) * d)

    @property
    def dim(self) -> int:
        return len(self.down)

    def is_zero(self) -> bool:
        return not any(self.down) and not any(self.up)

    def width(self) -> tuple[float, ...]:
        return tuple(a + b for a, b in zip(self.down, self.up))


@dataclass(frozen=True)
class Polytope:
    dim: int
    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    downward_closed: tuple[bool, ...]
    rays: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def halfspaces(self) -> list[tuple[np.ndarray, float]]:
        return [(self.normals[i], float(self.offsets[i])) for i in range(len(self.offsets))]

    def recession_rays(self) -> np.ndarray:
        """All recession directions: the closure rays plus any extra rays."""
        rays = [-np.eye(self.dim)[i] for i in range(self.dim) if self.downward_closed[i]]
        if self.rays.size:
            rays.extend(self.rays)
        return np.asarray(rays, dtype=float).reshape(-1, self.dim)

    def support(self, direction: Sequence[float]) -> float:
        """``max_{p in P} direction . p`` (``inf`` if unbounded)."""
        u = np.asarray(direction, dtype=float)
        rays = self.recession_rays()
        if len(rays) and np.any(rays @ u > TOL):
            return float("inf")
        if len(self.vertices) == 0:
            return float("-inf")
        return float(np.max(self.vertices @ u))

    def slack(self, point: Sequence[float]) -> float:
        """Smallest ``b - w.p`` over all halfspaces (``inf`` if none)."""
        if len(self.offsets) == 0:
            return float("inf")
        p = np.asarray(point, dtype=float)
        return float(np.min(self.offsets - self.normals @ p))


# ---------------------------------------------------------------------------
# double description


def _row_normalize(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1)
    norms[norms == 0] = 1.0
    return a / norms[:, None]


def extreme_rays(a: np.ndarray, tol: float = TOL) -> tuple[np.ndarray, np.ndarray]:
    """Generators of the cone ``{x : a x <= 0}``.

    Returns ``(rays, lineality)``: extreme rays of the pointed part (unit
    vectors, as rows) and an orthonormal basis of the lineality space.
    """
    a = np.asarray(a, dtype=float)
    m = a.shape[1]
    if a.shape[0] == 0:
        return np.zeros((0, m)), np.eye(m)
    a = _row_normalize(a)
    _, sing, vt = np.linalg.svd(a)
    rank = int(np.sum(sing > tol * max(1.0, sing[0] if len(sing) else 1.0)))
    lineality = vt[rank:]
    if rank == 0:
        return np.zeros((0, m)), lineality
    basis = vt[:rank].T
    ay = _row_normalize(a @ basis)
    _, _, piv = qr(ay.T, pivoting=True)
    init = [int(x) for x in piv[:rank]]
    inv = np.linalg.inv(ay[init])
    rays = [-inv[:, j] / np.linalg.norm(inv[:, j]) for j in range(rank)]
    zeros = [sum(1 << init[i] for i in range(rank) if i != j) for j in range(rank)]
    rest = [i for i in range(len(ay)) if i not in set(init)]
    for i in rest:
        row = ay[i]
        vals = np.array([row @ r for r in rays])
        pos = [k for k in range(len(rays)) if vals[k] > tol]
        if not pos:
            for k in range(len(rays)):
                if abs(vals[k]) <= tol:
                    zeros[k] |= 1 << i
            continue
        neg = [k for k in range(len(rays)) if vals[k] < -tol]
        zer = [k for k in range(len(rays)) if abs(vals[k]) <= tol]
        new_rays = [rays[k] for k in neg] + [rays[k] for k in zer]
        new_zeros = [zeros[k] for k in neg] + [zeros[k] | (1 << i) for k in zer]
        for p in pos:
            for q in neg:
                common = zeros[p] & zeros[q]
                if common.bit_count() < rank - 2:
                    continue
                adjacent = True
                for k in range(len(rays)):
                    if k != p and k != q and (zeros[k] & common) == common:
                        adjacent = False
                        break
                if not adjacent:
                    continue
                r = vals[p] * rays[q] - vals[q] * rays[p]
                nrm = np.linalg.norm(r)
                if nrm <= tol:
                    continue
                new_rays.append(r / nrm)
                new_zeros.append(common | (1 << i))
        rays, zeros = new_rays, new_zeros
    out = np.asarray(rays).reshape(-1, rank) @ basis.T if rays else np.zeros((0, m))
    return out, lineality


# ---------------------------------------------------------------------------
# constructors


def _clean(a: np.ndarray) -> np.ndarray:
    return np.where(np.abs(a) < 1e-13, 0.0, a)


def _check_dim(d: int) -> None:
    if d > MAX_DIM:
        raise DimensionTooHigh(f"dimension {d} exceeds the supported maximum of {MAX_DIM}")
    if d < 1:
        raise ValueError("dimension must be positive")


def _dedupe(points: np.ndarray, tol: float) -> np.ndarray:
    kept: list[np.ndarray] = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= tol for q in kept):
            kept.append(p)
    return np.asarray(kept)


def _closure_rays(d: int, flags: Sequence[bool]) -> np.ndarray:
    return np.asarray([-np.eye(d)[i] for i in range(d) if flags[i]], dtype=float).reshape(-1, d)


def hull(points: Iterable[Sequence[float]], downward_closed: Sequence[bool] | bool = False,
         rays: Iterable[Sequence[float]] = ()) -> Polytope:
    """Convex hull of ``points`` plus the cone of recession rays."""
    pts = np.asarray([list(map(float, p)) for p in points], dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("hull needs at least one point")
    d = pts.shape[1]
    _check_dim(d)
    flags = tuple([bool(downward_closed)] * d) if isinstance(downward_closed, (bool, np.bool_)) else tuple(map(bool, downward_closed))
    extra = np.asarray([list(map(float, r)) for r in rays], dtype=float).reshape(-1, d)
    scale = max(1.0, float(np.max(np.abs(pts))))
    tol = TOL * scale
    pts = _dedupe(pts, tol)
    all_rays = np.vstack([_closure_rays(d, flags), _row_normalize(extra) if len(extra) else extra])

    center = pts[0]
    directions = np.vstack([pts - center, all_rays])
    _, sing, vt = np.linalg.svd(directions) if len(directions) else (None, np.zeros(0), np.eye(d))
    k = int(np.sum(sing > tol)) if len(sing) else 0
    span = vt[:k].T  # d x k orthonormal basis of the affine directions
    complement = vt[k:]

    normals: list[np.ndarray] = []
    offsets: list[float] = []
    for n in complement:
        c = float(n @ center)
        normals += [n, -n]
        offsets += [c, -c]
    if k > 0:
        ys = (pts - center) @ span
        yr = all_rays @ span
        polar = np.vstack([np.hstack([ys / scale, -np.ones((len(ys), 1))]),
                           np.hstack([yr, np.zeros((len(yr), 1))])])
        gens, _ = extreme_rays(polar, tol=1e-10)
        for g in gens:
            a, beta = g[:-1], g[-1]
            na = np.linalg.norm(a)
            if na <= 1e-10:
                continue
            w = span @ (a / na)
            normals.append(w)
            offsets.append(float(beta / na * scale + w @ center))
    normals_arr = _clean(np.asarray(normals, dtype=float).reshape(-1, d))
    offsets_arr = _clean(np.asarray(offsets, dtype=float))

    verts = []
    for p in pts:
        tight = np.abs(normals_arr @ p - offsets_arr) <= tol * 10 if len(offsets_arr) else np.zeros(0, bool)
        if len(offsets_arr) and np.linalg.matrix_rank(normals_arr[tight], tol=1e-8) == d:
            verts.append(p)
    if not verts and len(pts) == 1:
        verts = [pts[0]]
    verts_arr = np.asarray(verts, dtype=float).reshape(-1, d)
    if len(verts_arr) > 1:
        verts_arr = verts_arr[np.lexsort(verts_arr.T[::-1])]
    return Polytope(d, verts_arr, normals_arr, offsets_arr, flags, _row_normalize(extra) if len(extra) else np.zeros((0, d)))


def from_halfspaces(normals: Sequence[Sequence[float]], offsets: Sequence[float],
                    downward_closed: Sequence[bool] | bool = False) -> Polytope:
    """Polyhedron ``{p : w.p <= b}``; vertices and recession rays are enumerated."""
    w = np.asarray(normals, dtype=float)
    b = np.asarray(offsets, dtype=float)
    d = w.shape[1]
    _check_dim(d)
    norms = np.linalg.norm(w, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero normal")
    w = w / norms[:, None]
    b = b / norms
    flags = tuple([bool(downward_closed)] * d) if isinstance(downward_closed, (bool, np.bool_)) else tuple(map(bool, downward_closed))
    scale = max(1.0, float(np.max(np.abs(b)))) if len(b) else 1.0
    cone = np.vstack([np.hstack([w, -b[:, None] / scale]), np.hstack([np.zeros(d), [-1.0]])])
    gens, lin = extreme_rays(cone, tol=1e-10)
    verts, rays = [], []
    for g in gens:
        p, t = g[:-1], g[-1]
        if t > 1e-10:
            verts.append(p / t * scale)
        elif np.linalg.norm(p) > 1e-10:
            rays.append(p / np.linalg.norm(p))
    for g in lin:
        p = g[:-1]
        if np.linalg.norm(p) > 1e-10:
            rays += [p / np.linalg.norm(p), -p / np.linalg.norm(p)]
    closure = {i for i in range(d) if flags[i]}
    rays = [r for r in rays if not any(np.allclose(r, -np.eye(d)[i], atol=1e-9) for i in closure)]
    verts_arr = _clean(np.asarray(verts, dtype=float).reshape(-1, d))
    if len(verts_arr) > 1:
        verts_arr = verts_arr[np.lexsort(verts_arr.T[::-1])]
    return Polytope(d, verts_arr, w, b, flags, np.asarray(rays, dtype=float).reshape(-1, d))


# ---------------------------------------------------------------------------
# queries


def nnls(a: np.ndarray, b: np.ndarray, tol: float = 1e-13, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Lawson-Hanson active-set solution of ``min ||a x - b||`` with ``x >= 0``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[1]
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    max_iter = max_iter or 30 * n + 100
    grad = a.T @ (b - a @ x)
    it = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, grad)) > tol and it < max_iter:
        it += 1
        passive[int(np.argmax(np.where(passive, -np.inf, grad)))] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(a[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > tol):
                x = z
                break
            bad = passive & (z <= tol)
            alpha = np.min(x[bad] / (x[bad] - z[bad]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
        grad = a.T @ (b - a @ x)
    return x, float(np.linalg.norm(a @ x - b))


def contains(poly: Polytope, point: Sequence[float], tol: float = TOL) -> bool:
    p = np.asarray(point, dtype=float)
    if len(poly.offsets) == 0:
        return True
    return bool(np.all(poly.normals @ p - poly.offsets <= tol))


def translate(poly: Polytope, box: ErrorBox, sign: str) -> Polytope:
    """Shift by ``-box.down`` (``sign='down'``) or ``+box.up`` (``sign='up'``)."""
    if sign == "down":
        shift = -np.asarray(box.down, dtype=float)
    elif sign == "up":
        shift = np.asarray(box.up, dtype=float)
    else:
        raise ValueError("sign must be 'down' or 'up'")
    return Polytope(
        poly.dim,
        poly.vertices + shift,
        poly.normals.copy(),
        poly.offsets + (poly.normals @ shift if len(poly.offsets) else 0.0),
        poly.downward_closed,
        poly.rays.copy(),
    )


def nearest_point(poly: Polytope, point: Sequence[float]) -> tuple[np.ndarray, float]:
    """Closest point of ``poly`` (given by its generators) to ``point``."""
    v = np.asarray(point, dtype=float)
    d = poly.dim
    pts = poly.vertices - v
    rays = poly.recession_rays()
    scale = max(1.0, float(np.max(np.abs(pts))) if len(pts) else 1.0)
    cols = [np.append(p / scale, 1.0) for p in pts] + [np.append(r, 0.0) for r in rays]
    mat = np.asarray(cols).T
    target = np.zeros(d + 1)
    target[-1] = 1.0
    coef, _ = nnls(mat, target)
    k = len(pts)
    s = coef[:k].sum()
    if s <= 0:
        raise ArithmeticError("degenerate nearest-point problem")
    x = (pts.T @ coef[:k] / scale + (rays.T @ coef[k:] if len(rays) else 0.0)) / s * scale
    return v + x, float(np.linalg.norm(x))


def max_gap(under: Polytope, over: Polytope) -> tuple[np.ndarray, float]:
    """Over vertex farthest from ``under``.

    Returns ``(w, gap)`` where ``w`` is the unit direction from the nearest point
    of ``under`` to that vertex (the separating normal) and ``gap`` the
    Euclidean distance.  When every over vertex lies in ``under`` the gap is 0
    and ``w`` is the all-ones direction.
    """
    d = over.dim
    under_rays = under.recession_rays()
    for r in over.recession_rays():
        if not _ray_in_cone(r, under_rays):
            return np.full(d, 1.0 / np.sqrt(d)), float("inf")
    best_gap = 0.0
    best_w = None
    for v in over.vertices:
        proj, dist = nearest_point(under, v)
        if dist <= 1e-12:
            continue
        w = (v - proj) / dist
        w = np.where(np.abs(w) < 1e-12, 0.0, w)
        if dist > best_gap + 1e-12 or (abs(dist - best_gap) <= 1e-12 and best_w is not None and tuple(w) < tuple(best_w)):
            best_gap, best_w = dist, w
    if best_w is None:
        return np.full(d, 1.0 / np.sqrt(d)), 0.0
    return best_w, best_gap


def _ray_in_cone(r: np.ndarray, rays: np.ndarray) -> bool:
    if len(rays) == 0:
        return bool(np.linalg.norm(r) <= TOL)
    coef, res = nnls(rays.T, r)
    return res <= 1e-7
