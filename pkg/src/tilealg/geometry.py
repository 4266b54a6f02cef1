"""Exact rational geometry for tile supports in dimension 1 and 2.

Supports are closed intervals (d=1) or simple polygons with rational vertices
(d=2, counter-clockwise).  Every predicate here is decided exactly over the
rationals; there is no floating point on any code path.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

Frac = Fraction
Vec = tuple[Fraction, ...]


def frac(x) -> Fraction:
    """Parse "p/q" strings, ints, or Fractions into an exact Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, int):
        return Fraction(x)
    raise TypeError(f"not an exact rational: {x!r}")


def vec(coords) -> Vec:
    return tuple(frac(c) for c in coords)


def vadd(a: Vec, b: Vec) -> Vec:
    return tuple(x + y for x, y in zip(a, b))


def vsub(a: Vec, b: Vec) -> Vec:
    return tuple(x - y for x, y in zip(a, b))


def vscale(a: Vec, s: Fraction) -> Vec:
    return tuple(x * s for x in a)


def norm2(a: Vec) -> Fraction:
    return sum(x * x for x in a)


def ball_in_ball(center: Vec, r: Fraction, big_radius: Fraction) -> bool:
    """Exact test for B_r(center) <= B_{big_radius}(0): |center| + r <= R."""
    if r > big_radius:
        return False
    return norm2(center) <= (big_radius - r) ** 2


# ---------------------------------------------------------------------------
# d = 1: closed intervals [lo, hi]
# ---------------------------------------------------------------------------


def interval_measure(lo: Fraction, hi: Fraction) -> Fraction:
    return hi - lo


def interval_dist2(x: Fraction, lo: Fraction, hi: Fraction) -> Fraction:
    if x < lo:
        return (lo - x) ** 2
    if x > hi:
        return (x - hi) ** 2
    return Fraction(0)


def interval_radius2(x: Fraction, lo: Fraction, hi: Fraction) -> Fraction:
    return max((x - lo) ** 2, (hi - x) ** 2)


# ---------------------------------------------------------------------------
# d = 2: simple polygons, CCW vertex lists
# ---------------------------------------------------------------------------


def polygon_area2(poly: Sequence[Vec]) -> Fraction:
    """Twice the signed area (shoelace). Positive for CCW."""
    s = Fraction(0)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return s


def polygon_area(poly: Sequence[Vec]) -> Fraction:
    return abs(polygon_area2(poly)) / 2


def polygon_centroid(poly: Sequence[Vec]) -> Vec:
    a2 = polygon_area2(poly)
    cx = Fraction(0)
    cy = Fraction(0)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        cross = x1 * y2 - x2 * y1
        cx += (x1 + x2) * cross
        cy += (y1 + y2) * cross
    return (cx / (3 * a2), cy / (3 * a2))


def _orient(a: Vec, b: Vec, c: Vec) -> Fraction:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def point_in_polygon(p: Vec, poly: Sequence[Vec]) -> int:
    """Exact location: 1 interior, 0 boundary, -1 exterior (even-odd ray)."""
    n = len(poly)
    x, y = p
    inside = False
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        # boundary check: p on segment ab
        if _orient((ax, ay), (bx, by), p) == 0:
            if min(ax, bx) <= x <= max(ax, bx) and min(ay, by) <= y <= max(ay, by):
                return 0
        if (ay > y) != (by > y):
            # exact crossing test at height y
            xi = ax + (bx - ax) * (y - ay) / (by - ay)
            if xi > x:
                inside = not inside
    return 1 if inside else -1


def segment_dist2(p: Vec, a: Vec, b: Vec) -> Fraction:
    ab = vsub(b, a)
    ap = vsub(p, a)
    denom = norm2(ab)
    if denom == 0:
        return norm2(ap)
    t = (ap[0] * ab[0] + ap[1] * ab[1]) / denom
    if t <= 0:
        return norm2(ap)
    if t >= 1:
        return norm2(vsub(p, b))
    proj = vadd(a, vscale(ab, t))
    return norm2(vsub(p, proj))


def polygon_dist2(p: Vec, poly: Sequence[Vec]) -> Fraction:
    """Squared distance from p to the closed region bounded by poly."""
    if point_in_polygon(p, poly) >= 0:
        return Fraction(0)
    return polygon_boundary_dist2(p, poly)


def polygon_boundary_dist2(p: Vec, poly: Sequence[Vec]) -> Fraction:
    n = len(poly)
    return min(segment_dist2(p, poly[i], poly[(i + 1) % n]) for i in range(n))


def polygon_radius2(p: Vec, poly: Sequence[Vec]) -> Fraction:
    """Max squared distance from p to the region (attained at a vertex)."""
    return max(norm2(vsub(v, p)) for v in poly)


def triangulate(poly: Sequence[Vec]) -> list[tuple[Vec, Vec, Vec]]:
    """Ear-clipping triangulation of a simple polygon (any orientation)."""
    pts = list(poly)
    if polygon_area2(pts) < 0:
        pts.reverse()
    tris: list[tuple[Vec, Vec, Vec]] = []
    idx = list(range(len(pts)))
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(poly) ** 2:
            raise ValueError("triangulation failed; polygon may be non-simple")
        n = len(idx)
        clipped = False
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            a, b, c = pts[i0], pts[i1], pts[i2]
            if _orient(a, b, c) <= 0:
                continue
            ear = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = pts[j]
                if (
                    _orient(a, b, p) >= 0
                    and _orient(b, c, p) >= 0
                    and _orient(c, a, p) >= 0
                ):
                    ear = False
                    break
            if ear:
                tris.append((a, b, c))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            raise ValueError("no ear found; polygon may be non-simple")
    tris.append((pts[idx[0]], pts[idx[1]], pts[idx[2]]))
    return tris


def clip_convex(subject: Sequence[Vec], clip: Sequence[Vec]) -> list[Vec]:
    """Sutherland-Hodgman: intersect a convex subject with a convex CCW clip."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        a, b = clip[i], clip[(i + 1) % n]
        inp = output
        output = []
        prev = inp[-1]
        prev_side = _orient(a, b, prev)
        for cur in inp:
            side = _orient(a, b, cur)
            if side >= 0:
                if prev_side < 0:
                    output.append(_line_intersect(prev, cur, a, b))
                output.append(cur)
            elif prev_side > 0:
                output.append(_line_intersect(prev, cur, a, b))
            elif prev_side == 0:
                # prev on the line, cur strictly outside: nothing to add
                pass
            prev, prev_side = cur, side
    return output


def _line_intersect(p: Vec, q: Vec, a: Vec, b: Vec) -> Vec:
    d1 = _orient(a, b, p)
    d2 = _orient(a, b, q)
    t = d1 / (d1 - d2)
    return vadd(p, vscale(vsub(q, p), t))


def intersection_area(poly1: Sequence[Vec], poly2: Sequence[Vec]) -> Fraction:
    """Exact area of the intersection of two simple polygons."""
    total = Fraction(0)
    tris2 = triangulate(poly2)
    for t1 in triangulate(poly1):
        for t2 in tris2:
            clipped = clip_convex(t1, t2)
            if len(clipped) >= 3:
                total += polygon_area(clipped)
    return total


def polygon_contains(outer: Sequence[Vec], inner: Sequence[Vec]) -> bool:
    """inner subset of outer, decided by exact area bookkeeping."""
    return intersection_area(outer, inner) == polygon_area(inner)


def interiors_disjoint(poly1: Sequence[Vec], poly2: Sequence[Vec]) -> bool:
    return intersection_area(poly1, poly2) == 0
