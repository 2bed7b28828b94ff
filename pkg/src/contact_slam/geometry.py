"""
Planar polygon geometry: contours with outward normals, rigid transforms and
swept first-contact queries between translating polygons.

Lengths are millimetres, angles radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# dot-product threshold for two normals to count as antiparallel
EPS_N = math.cos(math.radians(175.0))
EPS_PEN = 1e-3
EPS_AREA = 1e-6

_TINY = 1e-12
_OVERLAP_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid polygon input."""


class PenetrationError(GeometryError):
    """Moving contour starts inside a static contour."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, other: "Pose2") -> "Pose2":
        """Return ``self * other``: apply ``other`` first, then ``self``."""
        t = rot2(self.theta) @ other.xy + self.xy
        return Pose2(t[0], t[1], self.theta + other.theta)

    def inverse(self) -> "Pose2":
        t = -(rot2(-self.theta) @ self.xy)
        return Pose2(t[0], t[1], -self.theta)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ rot2(self.theta).T + self.xy

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.theta]


@dataclass(frozen=True)
class Edge:
    start: np.ndarray
    end: np.ndarray
    normal: np.ndarray


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True
    return False


def _is_simple(v: np.ndarray) -> bool:
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a, b, v[j], v[(j + 1) % n]):
                return False
    return True


def _convex(v: np.ndarray) -> bool:
    n = len(v)
    return all(_cross(v[i], v[(i + 1) % n], v[(i + 2) % n]) >= -1e-9 for i in range(n))


def _point_in_triangle(p, a, b, c) -> bool:
    return _cross(a, b, p) >= -1e-12 and _cross(b, c, p) >= -1e-12 and _cross(c, a, p) >= -1e-12


def _ear_clip(v: np.ndarray) -> list[list[int]]:
    idx = list(range(len(v)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(v) ** 2:
            raise GeometryError("triangulation failed; polygon is not simple")
        m = len(idx)
        for k in range(m):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, c = v[i0], v[i1], v[i2]
            if _cross(a, b, c) <= 1e-12:
                continue
            if any(_point_in_triangle(v[j], a, b, c) for j in idx if j not in (i0, i1, i2)):
                continue
            tris.append([i0, i1, i2])
            idx.pop(k)
            break
    tris.append(idx)
    return tris


def _merge_pieces(v: np.ndarray, pieces: list[list[int]]) -> list[list[int]]:
    # Hertel-Mehlhorn style greedy merge across shared diagonals
    merged = True
    while merged:
        merged = False
        for a in range(len(pieces)):
            for b in range(a + 1, len(pieces)):
                pa, pb = pieces[a], pieces[b]
                shared = None
                for k in range(len(pa)):
                    i, j = pa[k], pa[(k + 1) % len(pa)]
                    for m in range(len(pb)):
                        if pb[m] == j and pb[(m + 1) % len(pb)] == i:
                            shared = (k, m)
                            break
                    if shared:
                        break
                if not shared:
                    continue
                k, m = shared
                # walk pa from j around to i, then pb from i around to j (exclusive)
                ra = pa[k + 1:] + pa[:k + 1]
                rb = pb[m + 1:] + pb[:m + 1]
                cand = ra + rb[1:-1]
                if _convex(v[cand]):
                    pieces = [p for t, p in enumerate(pieces) if t not in (a, b)] + [cand]
                    merged = True
                    break
            if merged:
                break
    return pieces


@dataclass(frozen=True, eq=False)
class Contour:
    """Counterclockwise simple polygon with unit outward edge normals."""

    vertices: np.ndarray
    id: str = ""
    normals: np.ndarray = field(init=False, repr=False)
    pieces: tuple = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        e = np.roll(v, -1, axis=0) - v
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        n.setflags(write=False)
        object.__setattr__(self, "normals", n)
        if _convex(v):
            parts = [v]
        else:
            parts = [v[p] for p in _merge_pieces(v, _ear_clip(v))]
        object.__setattr__(self, "pieces", tuple(parts))

    def __len__(self):
        return len(self.vertices)

    def __eq__(self, other):
        if not isinstance(other, Contour):
            return NotImplemented
        return (self.id == other.id and self.vertices.shape == other.vertices.shape
                and bool(np.allclose(self.vertices, other.vertices, atol=1e-9)))

    @property
    def edges(self) -> list[Edge]:
        v = self.vertices
        return [Edge(v[i], v[(i + 1) % len(v)], self.normals[i]) for i in range(len(v))]

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cr = x * yn - xn * y
        a = 0.5 * cr.sum()
        return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * a)

    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def translated(self, offset) -> "Contour":
        return Contour(self.vertices + np.asarray(offset, dtype=float), self.id)

    def to_list(self) -> list[list[float]]:
        return [[round(float(x), 2), round(float(y), 2)] for x, y in self.vertices]


def build_contour(vertices: Sequence, id: str = "") -> Contour:
    """Build a validated contour, reordering clockwise input to counterclockwise.

    Raises:
        GeometryError: fewer than 3 vertices, near-zero area or self-intersection.
    """
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise GeometryError(f"contour {id!r}: need at least 3 2-D vertices, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise GeometryError(f"contour {id!r}: non-finite vertex")
    area = _signed_area(v)
    if abs(area) < EPS_AREA:
        raise GeometryError(f"contour {id!r}: degenerate polygon (area {area:.3g} mm^2)")
    if area < 0:
        # reverse while keeping the first vertex first
        v = np.roll(v[::-1], 1, axis=0)
    if np.any(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1) < 1e-9):
        raise GeometryError(f"contour {id!r}: repeated vertex")
    if not _is_simple(v):
        raise GeometryError(f"contour {id!r}: self-intersecting polygon")
    return Contour(v, id)


def collinear_classes(c: Contour, tol: float = 1e-6) -> np.ndarray:
    """For each edge, the lowest index of an edge on the same supporting line with the same normal."""
    off = np.einsum("ij,ij->i", c.normals, c.vertices)
    out = np.arange(len(c))
    for i in range(len(c)):
        for j in range(i):
            if out[j] == j and np.allclose(c.normals[i], c.normals[j], atol=1e-9) and abs(off[i] - off[j]) <= tol:
                out[i] = j
                break
    return out


def transform_contour(c: Contour, pose: Pose2) -> Contour:
    return Contour(pose.apply(c.vertices), c.id)


@dataclass(frozen=True)
class ContactPair:
    """Environment edge and object edge in contact, each as (contour id, edge index)."""

    env_edge: tuple
    obj_edge: tuple

    def as_list(self) -> list:
        return [list(self.env_edge), list(self.obj_edge)]

    def __str__(self):
        return f"{self.env_edge[0]}:{self.env_edge[1]}|{self.obj_edge[0]}:{self.obj_edge[1]}"


def is_antiparallel(n1, n2) -> bool:
    return float(np.dot(n1, n2)) <= EPS_N


@dataclass(frozen=True)
class SweepHit:
    distance: float
    pair: ContactPair
    contact_point: np.ndarray


@dataclass
class BatchSweep:
    """Per-offset results of a batched sweep.

    distance is ``inf`` where nothing is hit within ``max_dist``; ``env_index``
    and ``obj_index`` are -1 there. ``env_index`` indexes the concatenated
    edges of all statics (see ``edge_table``).
    """

    distance: np.ndarray
    env_index: np.ndarray
    obj_index: np.ndarray
    penetration: np.ndarray


def edge_table(statics: Sequence[Contour]) -> list[tuple[str, int]]:
    return [(c.id, i) for c in statics for i in range(len(c))]


def _locate(statics: Sequence[Contour], flat: int) -> tuple[int, int]:
    for k, c in enumerate(statics):
        if flat < len(c):
            return k, flat
        flat -= len(c)
    raise IndexError(flat)


def _piece_axes(p: np.ndarray) -> np.ndarray:
    e = np.roll(p, -1, axis=0) - p
    n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _pair_toi(mp, sp, d, offsets, pen_tol):
    """Time of impact of convex piece ``mp`` (placed at offsets) moving along d into ``sp``.

    Returns (t_hit, depth0): t_hit is inf when there is no blocking contact.
    """
    axes = np.vstack([_piece_axes(mp), _piece_axes(sp)])
    pm = mp @ axes.T  # (k, A)
    ps = sp @ axes.T
    shift = offsets @ axes.T  # (P, A)
    a0 = pm.min(axis=0) + shift
    a1 = pm.max(axis=0) + shift
    b0 = ps.min(axis=0)
    b1 = ps.max(axis=0)
    s = axes @ d
    s = np.where(np.abs(s) < _TINY, 0.0, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo_pos = (b0 - a1) / s
        hi_pos = (b1 - a0) / s
    moving = s != 0
    tl = np.where(s > 0, lo_pos, hi_pos)
    th = np.where(s > 0, hi_pos, lo_pos)
    static_overlap = (a0 < b1 - _OVERLAP_TOL) & (a1 > b0 + _OVERLAP_TOL)
    tl = np.where(moving, tl, np.where(static_overlap, -np.inf, np.inf))
    th = np.where(moving, th, np.where(static_overlap, np.inf, -np.inf))
    t_enter = tl.max(axis=1)
    t_exit = th.min(axis=1)
    collide = t_enter < t_exit - _OVERLAP_TOL
    depth0 = np.minimum(b1 - a0, a1 - b0).min(axis=1)
    t_hit = np.where(collide & (t_enter >= 0.0), t_enter, np.inf)
    inside = collide & (t_enter < 0.0) & (t_exit > 0.0)
    if np.any(inside):
        delta = 1e-6
        a0d = a0 + delta * s
        a1d = a1 + delta * s
        depth_d = np.minimum(b1 - a0d, a1d - b0).min(axis=1)
        deeper = depth_d > depth0 + 1e-3 * delta
        t_hit = np.where(inside & deeper & (depth0 <= pen_tol), 0.0, t_hit)
    depth = np.where(inside, np.maximum(depth0, 0.0), 0.0)
    return t_hit, depth


def _point_seg_dist(p, a, b):
    """Distance from points p (..., 2) to segments a-b (..., 2), broadcasting."""
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.clip(np.sum((p - a) * ab, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p - proj, axis=-1)


def _label(moving: Contour, statics: Sequence[Contour], q: np.ndarray, d: np.ndarray, tol: float):
    sv = np.vstack([c.vertices for c in statics])
    se = np.vstack([np.roll(c.vertices, -1, axis=0) for c in statics])
    sn = np.vstack([c.normals for c in statics])
    mv = moving.vertices
    me = np.roll(mv, -1, axis=0)
    mn = moving.normals
    # shapes: (H, S, M, 2)
    ms = mv[None, None, :, :] + q[:, None, None, :]
    mf = me[None, None, :, :] + q[:, None, None, :]
    ss = sv[None, :, None, :]
    sf = se[None, :, None, :]
    dist = np.minimum.reduce([
        _point_seg_dist(ms, ss, sf),
        _point_seg_dist(mf, ss, sf),
        _point_seg_dist(ss, ms, mf),
        _point_seg_dist(sf, ms, mf),
    ])
    anti = -(sn @ mn.T)  # (S, M); 1 for exact antiparallel
    blocking = ((sn @ d) < -1e-9)[:, None] | ((mn @ d) > 1e-9)[None, :]
    oppose = -(sn @ d)[:, None] + (mn @ d)[None, :]
    score = anti + 1e-3 * oppose - 1e-6 * dist / max(tol, 1e-12)
    valid = (dist <= tol) & blocking[None]
    score = np.where(valid, score, -np.inf)
    # fall back to the closest blocking pair when tolerance excludes everything
    none = ~valid.reshape(len(q), -1).any(axis=1)
    if np.any(none):
        fallback = np.where(blocking[None], -dist, -np.inf)
        score[none] = fallback[none]
    flat = score.reshape(len(q), -1).argmax(axis=1)
    si, mi = np.unravel_index(flat, anti.shape)
    return si, mi


def sweep_batch(moving: Contour, direction, max_dist: float, statics: Sequence[Contour],
                offsets=None, pen_tol: float = EPS_PEN, labels: bool = True) -> BatchSweep:
    """Sweep ``moving`` translated by each offset along ``direction``.

    Args:
        moving: contour in its local frame.
        direction: unit 2-vector.
        max_dist: largest travel considered.
        statics: fixed contours.
        offsets: (P, 2) placements of the moving contour; defaults to one zero offset.
        pen_tol: initial overlap tolerated before a placement counts as penetrating.
        labels: compute contact edge pairs for hit placements.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    off = np.zeros((1, 2)) if offsets is None else np.atleast_2d(np.asarray(offsets, dtype=float))
    P = len(off)
    best = np.full(P, np.inf)
    pen = np.zeros(P)
    for sc in statics:
        for sp in sc.pieces:
            for mp in moving.pieces:
                t, depth = _pair_toi(mp, sp, d, off, pen_tol)
                best = np.minimum(best, t)
                pen = np.maximum(pen, depth)
    best = np.where(best <= max_dist + 1e-12, best, np.inf)
    env_i = np.full(P, -1, dtype=int)
    obj_i = np.full(P, -1, dtype=int)
    hit = np.isfinite(best)
    if labels and np.any(hit) and statics:
        q = off[hit] + best[hit, None] * d
        tol = 1e-6 + np.where(pen[hit] > 0, pen[hit], 0.0).max(initial=0.0)
        si, mi = _label(moving, statics, q, d, tol)
        env_i[hit] = si
        obj_i[hit] = mi
    return BatchSweep(best, env_i, obj_i, pen)


def _contact_point(moving: Contour, static: Contour, mi: int, si: int) -> np.ndarray:
    a, b = static.vertices[si], static.vertices[(si + 1) % len(static)]
    c, e = moving.vertices[mi], moving.vertices[(mi + 1) % len(moving)]
    u = b - a
    L = float(np.linalg.norm(u))
    u = u / L
    if is_antiparallel(static.normals[si], moving.normals[mi]):
        tc, te = float((c - a) @ u), float((e - a) @ u)
        lo, hi = max(0.0, min(tc, te)), min(L, max(tc, te))
        if hi >= lo:
            mid = a + 0.5 * (lo + hi) * u
            # only flush edges share a contact segment; a slight tilt touches at a vertex
            if float(_point_seg_dist(mid, c, e)) <= 1e-6:
                return mid
    # vertex contact: nearest endpoint onto the other segment
    cands = [(float(_point_seg_dist(c, a, b)), c), (float(_point_seg_dist(e, a, b)), e),
             (float(_point_seg_dist(a, c, e)), a), (float(_point_seg_dist(b, c, e)), b)]
    return np.array(min(cands, key=lambda t: t[0])[1], dtype=float)


def sweep_first_contact(moving: Contour, direction, max_dist: float,
                        statics: Sequence[Contour]) -> Optional[SweepHit]:
    """First contact of ``moving`` (world placement) translating along ``direction``.

    Returns None when nothing is touched within ``max_dist``.

    Raises:
        PenetrationError: the moving contour already overlaps a static by more than EPS_PEN.
    """
    res = sweep_batch(moving, direction, max_dist, statics)
    if res.penetration[0] > EPS_PEN:
        raise PenetrationError(
            f"contour {moving.id!r} starts {res.penetration[0]:.4g} mm inside the scene")
    if not np.isfinite(res.distance[0]):
        return None
    k, si = _locate(statics, int(res.env_index[0]))
    static = statics[k]
    mi = int(res.obj_index[0])
    dist = float(res.distance[0])
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    placed = moving.translated(dist * d)
    point = _contact_point(placed, static, mi, si)
    return SweepHit(dist, ContactPair((static.id, si), (moving.id, mi)), point)


def penetration_depth(moving: Contour, statics: Sequence[Contour], offsets=None) -> np.ndarray:
    """Largest SAT overlap depth against any static piece for each offset."""
    return sweep_batch(moving, (1.0, 0.0), 0.0, statics, offsets, pen_tol=np.inf,
                       labels=False).penetration


def points_in_region(points, region: Contour, tol: float = EPS_PEN) -> np.ndarray:
    """Even-odd membership for an (N, 2) array; points within ``tol`` of the boundary count."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    v = region.vertices
    w = np.roll(v, -1, axis=0)
    x, y = p[:, 0:1], p[:, 1:2]
    crosses = ((v[:, 1] > y) != (w[:, 1] > y))
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = v[:, 0] + (y - v[:, 1]) * (w[:, 0] - v[:, 0]) / (w[:, 1] - v[:, 1])
    inside = (np.sum(crosses & (x < xint), axis=1) % 2) == 1
    near = _point_seg_dist(p[:, None, :], v[None], w[None]).min(axis=1) <= tol
    return inside | near


def point_in_region(p, region: Contour) -> bool:
    return bool(points_in_region(np.asarray(p, dtype=float)[None], region)[0])


def rectangle(cx: float, cy: float, w: float, h: float, id: str = "") -> Contour:
    hw, hh = w / 2.0, h / 2.0
    return build_contour([(cx - hw, cy - hh), (cx + hw, cy - hh), (cx + hw, cy + hh), (cx - hw, cy + hh)], id)
