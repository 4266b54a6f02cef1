"""Substitution tilings with exact rational coordinates.

Prototiles carry a closed interval (d=1) or simple rational polygon (d=2)
support and an interior puncture.  A substitution rule inflates by a rational
factor and replaces each prototile with a list of children that tile the
inflated support exactly; the consistency check is an exact area computation.

Windows are finite samples of a reference tiling, recentred so one puncture
sits at the origin.  All counting in the groupoid layers happens on windows,
so the window records the completeness radius N (every hull tile meeting the
closed ball B_N(0) is present) and the uniform-discreteness gap of its
puncture set.  Punctures are stored on a scaled integer grid, which keeps set
membership exact and cheap even for windows with > 10^6 tiles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from . import geometry as geo
from .errors import (
    CoverageError,
    InconclusiveError,
    OutOfWindowError,
    PatchNotInHullError,
    PreconditionError,
    RuleInvalidError,
)
from .geometry import Frac, Vec, frac, vec

ZERO1 = (Fraction(0),)


@dataclass(frozen=True)
class Prototile:
    label: str
    support: tuple  # d=1: (lo, hi) Fractions; d=2: tuple of Vec, CCW
    puncture: Vec
    dimension: int

    def measure(self) -> Fraction:
        if self.dimension == 1:
            return geo.interval_measure(*self.support)
        return geo.polygon_area(self.support)

    def radius2_from_puncture(self) -> Fraction:
        if self.dimension == 1:
            return geo.interval_radius2(self.puncture[0], *self.support)
        return geo.polygon_radius2(self.puncture, self.support)

    def dist2_from(self, point: Vec, offset: Vec) -> Fraction:
        """Squared distance from point to support + offset."""
        if self.dimension == 1:
            return geo.interval_dist2(
                point[0] - offset[0], self.support[0], self.support[1]
            )
        shifted = tuple(geo.vsub(point, offset) for _ in (0,))[0]
        return geo.polygon_dist2(shifted, self.support)

    def validate(self) -> None:
        if self.dimension == 1:
            lo, hi = self.support
            if hi <= lo:
                raise RuleInvalidError(self.label, "degenerate interval support")
            if not lo < self.puncture[0] < hi:
                raise RuleInvalidError(self.label, "puncture not strictly interior")
        else:
            if geo.polygon_area(self.support) == 0:
                raise RuleInvalidError(self.label, "degenerate polygon support")
            if geo.point_in_polygon(self.puncture, self.support) != 1:
                raise RuleInvalidError(self.label, "puncture not strictly interior")


@dataclass(frozen=True)
class Tile:
    proto: int
    offset: Vec

    def puncture(self, protos: Sequence[Prototile]) -> Vec:
        return geo.vadd(self.offset, protos[self.proto].puncture)

    def translated(self, v: Vec) -> "Tile":
        return Tile(self.proto, geo.vadd(self.offset, v))


def tile_key(t: Tile):
    return (t.proto, t.offset)


@dataclass(frozen=True)
class Patch:
    tiles: tuple[Tile, ...]
    dimension: int

    def translated(self, v: Vec) -> "Patch":
        return Patch(tuple(t.translated(v) for t in self.tiles), self.dimension)

    def sorted_tiles(self) -> tuple[Tile, ...]:
        return tuple(sorted(self.tiles, key=tile_key))

    def measure(self, protos: Sequence[Prototile]) -> Fraction:
        return sum(protos[t.proto].measure() for t in self.tiles)

    def check_interior_disjoint(self, protos: Sequence[Prototile]) -> bool:
        tiles = self.tiles
        for i in range(len(tiles)):
            for j in range(i + 1, len(tiles)):
                if not _tiles_interior_disjoint(tiles[i], tiles[j], protos, self.dimension):
                    return False
        return True

    def is_connected(self, protos: Sequence[Prototile]) -> bool:
        n = len(self.tiles)
        if n <= 1:
            return True
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i in range(n):
            for j in range(i + 1, n):
                if _tiles_touch(self.tiles[i], self.tiles[j], protos, self.dimension):
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[ri] = rj
        return len({find(i) for i in range(n)}) == 1


def _tile_support_abs(t: Tile, protos: Sequence[Prototile], dim: int):
    p = protos[t.proto]
    if dim == 1:
        return (p.support[0] + t.offset[0], p.support[1] + t.offset[0])
    return tuple(geo.vadd(v, t.offset) for v in p.support)


def _tiles_interior_disjoint(a: Tile, b: Tile, protos, dim) -> bool:
    sa = _tile_support_abs(a, protos, dim)
    sb = _tile_support_abs(b, protos, dim)
    if dim == 1:
        return min(sa[1], sb[1]) <= max(sa[0], sb[0])
    return geo.intersection_area(sa, sb) == 0


def _tiles_touch(a: Tile, b: Tile, protos, dim) -> bool:
    sa = _tile_support_abs(a, protos, dim)
    sb = _tile_support_abs(b, protos, dim)
    if dim == 1:
        return min(sa[1], sb[1]) >= max(sa[0], sb[0])
    if geo.intersection_area(sa, sb) > 0:
        return True
    return any(geo.polygon_dist2(v, sb) == 0 for v in sa) or any(
        geo.polygon_dist2(v, sa) == 0 for v in sb
    )


class SubstitutionRule:
    """Inflation rule: children tile lambda*support exactly, per prototile."""

    def __init__(self, prototiles: Sequence[Prototile], inflation: Fraction,
                 children: dict[int, list[Tile]], name: str = ""):
        self.prototiles = list(prototiles)
        self.inflation = frac(inflation)
        self.children = children
        self.name = name
        self.dimension = prototiles[0].dimension

    def validate(self) -> None:
        if self.inflation <= 1:
            raise RuleInvalidError("*", "inflation must exceed 1")
        labels = [p.label for p in self.prototiles]
        if len(set(labels)) != len(labels):
            raise RuleInvalidError("*", "duplicate prototile labels")
        for p in self.prototiles:
            p.validate()
        lam = self.inflation
        d = self.dimension
        for idx, proto in enumerate(self.prototiles):
            kids = self.children.get(idx)
            if not kids:
                raise RuleInvalidError(proto.label, "no children")
            if d == 1:
                big = (lam * proto.support[0], lam * proto.support[1])
                for kid in kids:
                    s = _tile_support_abs(kid, self.prototiles, 1)
                    if s[0] < big[0] or s[1] > big[1]:
                        raise RuleInvalidError(proto.label, "child escapes inflated support")
            else:
                big = tuple(geo.vscale(v, lam) for v in proto.support)
                for kid in kids:
                    s = _tile_support_abs(kid, self.prototiles, 2)
                    if not geo.polygon_contains(big, s):
                        raise RuleInvalidError(proto.label, "child escapes inflated support")
            patch = Patch(tuple(kids), d)
            if not patch.check_interior_disjoint(self.prototiles):
                raise RuleInvalidError(proto.label, "children overlap")
            want = proto.measure() * lam ** d
            got = patch.measure(self.prototiles)
            if want != got:
                raise RuleInvalidError(
                    proto.label, f"children measure {got} != lambda^d * measure {want}"
                )

    def proto_index(self, label: str) -> int:
        for i, p in enumerate(self.prototiles):
            if p.label == label:
                return i
        raise PreconditionError(f"unknown prototile label {label!r}")

    def min_measure(self) -> Fraction:
        return min(p.measure() for p in self.prototiles)

    def max_measure(self) -> Fraction:
        return max(p.measure() for p in self.prototiles)


# ---------------------------------------------------------------------------
# Inflation
# ---------------------------------------------------------------------------


def inflate(rule: SubstitutionRule, patch: Patch, k: int) -> Patch:
    """k-fold substitution; exact coordinates, deterministic tile order."""
    if k < 0:
        raise PreconditionError("k must be nonnegative")
    rule.validate()
    tiles = list(patch.tiles)
    lam = rule.inflation
    for _ in range(k):
        nxt = []
        for t in tiles:
            base = geo.vscale(t.offset, lam)
            for kid in rule.children[t.proto]:
                nxt.append(Tile(kid.proto, geo.vadd(base, kid.offset)))
        tiles = nxt
    return Patch(tuple(tiles), patch.dimension)


class InflationHistory:
    """Generation-by-generation inflation record used for supertile decoding.

    Generation m holds tiles in final coordinates scaled down by lambda^(K-m);
    the level-j supertile of a final tile is its ancestor at generation K-j.
    """

    def __init__(self, rule: SubstitutionRule, seed: Tile, levels: int,
                 crop_center: Vec | None = None, crop_radius: Fraction | None = None):
        self.rule = rule
        self.levels = levels
        lam = rule.inflation
        protos_by_gen: list[list[int]] = [[seed.proto]]
        offsets_by_gen: list[list[Vec]] = [[seed.offset]]
        parents_by_gen: list[list[int]] = [[0]]
        for m in range(1, levels + 1):
            cp, co, cpar = [], [], []
            scale_rest = lam ** (levels - m)
            for pi, (proto, off) in enumerate(
                zip(protos_by_gen[m - 1], offsets_by_gen[m - 1])
            ):
                base = geo.vscale(off, lam)
                for kid in rule.children[proto]:
                    noff = geo.vadd(base, kid.offset)
                    if crop_center is not None and m < levels:
                        # prune subtrees whose final region misses the crop ball
                        if not _region_meets_ball(
                            rule, kid.proto, noff, scale_rest, crop_center, crop_radius
                        ):
                            continue
                    cp.append(kid.proto)
                    co.append(noff)
                    cpar.append(pi)
            protos_by_gen.append(cp)
            offsets_by_gen.append(co)
            parents_by_gen.append(cpar)
        self.protos_by_gen = protos_by_gen
        self.offsets_by_gen = offsets_by_gen
        self.parents_by_gen = parents_by_gen

    def ancestor(self, leaf_index: int, generations_up: int) -> int:
        idx = leaf_index
        for m in range(self.levels, self.levels - generations_up, -1):
            idx = self.parents_by_gen[m][idx]
        return idx


def _region_meets_ball(rule, proto, offset, scale_rest, center, radius) -> bool:
    p = rule.prototiles[proto]
    if rule.dimension == 1:
        lo = (p.support[0] + offset[0]) * scale_rest
        hi = (p.support[1] + offset[0]) * scale_rest
        return geo.interval_dist2(center[0], lo, hi) <= radius * radius
    poly = tuple(geo.vscale(geo.vadd(v, offset), scale_rest) for v in p.support)
    return geo.polygon_dist2(center, poly) <= radius * radius


def supertile_punctures(rule: SubstitutionRule, proto: int, level: int) -> list[Vec]:
    """Sorted puncture offsets of the level-`level` supertile of one prototile,
    relative to the supertile anchor (lambda^level * tile offset)."""
    patch = inflate(rule, Patch((Tile(proto, _zero(rule.dimension)),), rule.dimension), level)
    pts = sorted(t.puncture(rule.prototiles) for t in patch.tiles)
    return pts


def _zero(d: int) -> Vec:
    return tuple(Fraction(0) for _ in range(d))


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


class Window:
    """Finite sample of a reference tiling, recentred to a puncture at 0.

    The sample contains every hull tile meeting the closed ball B_N(0); a
    puncture u is m-valid when B_m(x(u)) lies inside B_N(0), so counts taken
    at m-valid punctures are exact hull counts.
    """

    def __init__(self, rule: SubstitutionRule | None, dimension: int,
                 protos: list[int], punctures: list[Vec], radius: Fraction,
                 prototiles: Sequence[Prototile] | None = None,
                 tiling_id: object | None = None, tiling_shift: Vec | None = None,
                 require_origin: bool = True):
        self.rule = rule
        self.dimension = dimension
        self.prototiles = list(prototiles if prototiles is not None else rule.prototiles)
        self.radius = frac(radius)
        self.protos = protos
        self._punctures = punctures
        self.tiling_id = tiling_id if tiling_id is not None else object()
        self.tiling_shift = tiling_shift if tiling_shift is not None else _zero(dimension)

        denoms = set()
        for p in punctures:
            for c in p:
                denoms.add(c.denominator)
        for p in self.prototiles:
            if dimension == 1:
                denoms.update([p.support[0].denominator, p.support[1].denominator])
            for c in p.puncture:
                denoms.add(c.denominator)
        self.scale = math.lcm(*denoms) if denoms else 1
        s = self.scale
        self.punc_scaled: list[tuple[int, ...]] = [
            tuple(int(c * s) for c in p) for p in punctures
        ]
        self.index: dict[tuple[int, ...], int] = {
            p: i for i, p in enumerate(self.punc_scaled)
        }
        if len(self.index) != len(self.punc_scaled):
            raise PreconditionError("duplicate punctures in window sample")
        origin = self.index.get(tuple(0 for _ in range(dimension)))
        if origin is None and require_origin:
            raise PreconditionError("window origin is not a puncture")
        self.origin = origin
        self._buckets: dict[tuple[int, ...], list[int]] | None = None
        self._gap2: Fraction | None = None
        # provenance, set by sample_window
        self.history: InflationHistory | None = None
        self.kept_full: list[int] | None = None
        self.shift: Vec | None = None
        self.level: int = 0

    # -- basic accessors ----------------------------------------------------

    def __len__(self) -> int:
        return len(self.protos)

    def puncture(self, i: int) -> Vec:
        return self._punctures[i]

    def tile(self, i: int) -> Tile:
        p = self.prototiles[self.protos[i]]
        return Tile(self.protos[i], geo.vsub(self._punctures[i], p.puncture))

    def find_puncture(self, x: Vec) -> int | None:
        s = self.scale
        key = tuple(c * s for c in x)
        if any(c.denominator != 1 for c in key):
            return None
        return self.index.get(tuple(int(c) for c in key))

    @property
    def gap2(self) -> Fraction:
        if self._gap2 is None:
            self._gap2 = self._compute_gap2()
        return self._gap2

    def _compute_gap2(self) -> Fraction:
        pts = self.punc_scaled
        if len(pts) < 2:
            return Fraction(1)
        best: int | None = None
        if self.dimension == 1:
            xs = sorted(p[0] for p in pts)
            best = min(b - a for a, b in zip(xs, xs[1:])) ** 2
        else:
            cell = self.scale  # unit cells in scaled coordinates
            buckets: dict[tuple[int, int], list[tuple[int, int]]] = {}
            for p in pts:
                buckets.setdefault((p[0] // cell, p[1] // cell), []).append(p)
            for (cx, cy), group in buckets.items():
                cand = []
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        cand.extend(buckets.get((cx + dx, cy + dy), ()))
                for p in group:
                    for q in cand:
                        if p is q:
                            continue
                        d2 = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
                        if best is None or d2 < best:
                            best = d2
            if best is None:
                best = self.scale ** 2
        return Fraction(best, self.scale ** 2)

    # -- validity -----------------------------------------------------------

    def is_valid(self, i: int, margin: Fraction) -> bool:
        margin = frac(margin)
        if margin > self.radius:
            return False
        lim = (self.radius - margin) * self.scale
        d2 = sum(c * c for c in self.punc_scaled[i])
        return d2 <= lim * lim

    def valid_indices(self, margin: Fraction) -> list[int]:
        margin = frac(margin)
        if margin > self.radius:
            return []
        lim = (self.radius - margin) * self.scale
        lim2 = lim * lim
        return [
            i
            for i, p in enumerate(self.punc_scaled)
            if sum(c * c for c in p) <= lim2
        ]

    def require_valid(self, i: int, margin: Fraction, what: str) -> None:
        if not self.is_valid(i, margin):
            raise OutOfWindowError(
                f"{what}: puncture {i} lacks margin {margin} in window of radius {self.radius}",
                required_radius=margin,
            )

    # -- spatial queries ----------------------------------------------------

    def _bucket_map(self):
        if self._buckets is None:
            cell = self.scale
            buckets: dict[tuple[int, ...], list[int]] = {}
            for i, p in enumerate(self.punc_scaled):
                key = tuple(c // cell for c in p)
                buckets.setdefault(key, []).append(i)
            self._buckets = buckets
        return self._buckets

    def punctures_in_ball(self, center: Vec, R: Fraction, strict: bool) -> list[int]:
        """Indices with |x - center| < R (strict) or <= R (closed)."""
        R = frac(R)
        s = self.scale
        c_exact = tuple(ccoord * s for ccoord in center)
        # integer fast path: center on the scaled grid and R^2*s^2 integral
        R2s2 = R * R * s * s
        int_path = all(c.denominator == 1 for c in c_exact)
        if int_path:
            c_int = tuple(int(c) for c in c_exact)
        out = []
        buckets = self._bucket_map()
        lo = [int(math.floor((cc - R * s) / s)) for cc in c_exact]
        hi = [int(math.floor((cc + R * s) / s)) for cc in c_exact]
        if self.dimension == 1:
            cells = [(x,) for x in range(lo[0], hi[0] + 1)]
        else:
            cells = [
                (x, y)
                for x in range(lo[0], hi[0] + 1)
                for y in range(lo[1], hi[1] + 1)
            ]
        if int_path and R2s2.denominator == 1:
            R2i = int(R2s2)
            if self.dimension == 1:
                cx = c_int[0]
                for cellkey in cells:
                    for i in buckets.get(cellkey, ()):
                        d2 = (self.punc_scaled[i][0] - cx) ** 2
                        if (d2 < R2i) if strict else (d2 <= R2i):
                            out.append(i)
            else:
                cx, cy = c_int
                for cellkey in cells:
                    for i in buckets.get(cellkey, ()):
                        px, py = self.punc_scaled[i]
                        d2 = (px - cx) ** 2 + (py - cy) ** 2
                        if (d2 < R2i) if strict else (d2 <= R2i):
                            out.append(i)
        else:
            for cellkey in cells:
                for i in buckets.get(cellkey, ()):
                    p = self.punc_scaled[i]
                    d2 = sum((pc - cc) ** 2 for pc, cc in zip(p, c_exact))
                    if (d2 < R2s2) if strict else (d2 <= R2s2):
                        out.append(i)
        out.sort()
        return out

    def tiles_meeting_ball(self, center: Vec, R: Fraction) -> list[int]:
        """Indices of tiles whose support meets the closed ball B_R(center)."""
        R = frac(R)
        reach = R + self._max_proto_span()
        out = []
        for i in self.punctures_in_ball(center, reach, strict=False):
            t = self.tile(i)
            d2 = self.prototiles[t.proto].dist2_from(center, t.offset)
            if d2 <= R * R:
                out.append(i)
        return out

    def _max_proto_span(self) -> Fraction:
        best = Fraction(0)
        for p in self.prototiles:
            r2 = p.radius2_from_puncture()
            # rational upper bound on sqrt(r2)
            best = max(best, _sqrt_ub(r2))
        return best

    # -- derived windows ------------------------------------------------------

    def shifted(self, v: Vec) -> "Window":
        """The same underlying tiling translated by v.

        The result is a hull element, not necessarily a punctured-hull element
        (its origin need not be a puncture); it is a legal metric operand.
        """
        v = vec(v)
        w = Window(
            self.rule,
            self.dimension,
            list(self.protos),
            [geo.vadd(p, v) for p in self._punctures],
            self.radius,
            prototiles=self.prototiles,
            tiling_id=self.tiling_id,
            tiling_shift=geo.vadd(self.tiling_shift, v),
            require_origin=False,
        )
        return w

    def with_relabelled_tile(self, i: int, new_proto: int) -> "Window":
        protos = list(self.protos)
        protos[i] = new_proto
        return Window(
            self.rule,
            self.dimension,
            protos,
            list(self._punctures),
            self.radius,
            prototiles=self.prototiles,
        )

    # -- supertile decoding ---------------------------------------------------

    def decode_supertiles(self, level: int):
        """Per-tile (type, anchor, position) for level-`level` supertiles.

        Requires provenance (window built by sample_window with level >= `level`).
        Positions index the lexicographically sorted punctures of the full
        supertile, so cropped siblings do not disturb the ranks.
        """
        if self.history is None or self.kept_full is None or self.shift is None:
            raise PreconditionError("window has no inflation provenance")
        if level > self.level:
            raise PreconditionError("window level too shallow for requested decode")
        hist = self.history
        lam = self.rule.inflation
        gen = hist.levels - level
        scale_up = lam ** level
        pos_tables: dict[int, dict[Vec, int]] = {}
        types, anchors, positions = [], [], []
        for wi in range(len(self.protos)):
            leaf = self.kept_full[wi]
            anc = hist.ancestor(leaf, level)
            t = hist.protos_by_gen[gen][anc]
            anchor_raw = geo.vscale(hist.offsets_by_gen[gen][anc], scale_up)
            anchor = geo.vsub(anchor_raw, self.shift)
            if t not in pos_tables:
                pts = supertile_punctures(self.rule, t, level)
                pos_tables[t] = {p: r for r, p in enumerate(pts)}
            rel = geo.vsub(self._punctures[wi], anchor)
            pos = pos_tables[t].get(rel)
            if pos is None:
                raise PreconditionError("provenance decode failed; inconsistent window")
            types.append(t)
            anchors.append(anchor)
            positions.append(pos)
        return types, anchors, positions


def _sqrt_ub(x: Fraction) -> Fraction:
    """Small rational upper bound for sqrt(x)."""
    if x == 0:
        return Fraction(0)
    num, den = x.numerator, x.denominator
    k = 2 ** 20
    r = math.isqrt(num * den * k * k)
    return Fraction(r + 1, den * k)


def _sqrt_lb(x: Fraction) -> Fraction:
    if x <= 0:
        return Fraction(0)
    num, den = x.numerator, x.denominator
    k = 2 ** 20
    r = math.isqrt(num * den * k * k)
    return Fraction(r, den * k)


def sqrt_bracket(x: Fraction) -> tuple[Fraction, Fraction]:
    """[lo, hi] enclosing sqrt(x); exact when x is a perfect rational square."""
    num, den = x.numerator, x.denominator
    rn, rd = math.isqrt(num * den), den
    if Fraction(rn, rd) ** 2 == x:
        r = Fraction(rn, rd)
        return (r, r)
    return (_sqrt_lb(x), _sqrt_ub(x))


# ---------------------------------------------------------------------------
# Window construction
# ---------------------------------------------------------------------------


def sample_window(rule: SubstitutionRule, seed_label: str, level: int,
                  N: Fraction) -> Window:
    """Inflate a seed `level` times, recentre at a puncture, crop to B_N."""
    rule.validate()
    N = frac(N)
    d = rule.dimension
    seed_idx = rule.proto_index(seed_label)
    seed = Tile(seed_idx, _zero(d))
    lam = rule.inflation
    region_scale = lam ** level
    proto = rule.prototiles[seed_idx]

    # the inflated patch tiles region_scale * support(seed)
    if d == 1:
        region = (proto.support[0] * region_scale, proto.support[1] * region_scale)
        center_guess = ((region[0] + region[1]) / 2,)
    else:
        region = tuple(geo.vscale(v, region_scale) for v in proto.support)
        center_guess = geo.polygon_centroid(region)

    def ball_inside(c: Vec) -> bool:
        if d == 1:
            return region[0] <= c[0] - N and c[0] + N <= region[1]
        if geo.point_in_polygon(c, region) != 1:
            return False
        return geo.polygon_boundary_dist2(c, region) >= N * N

    # full (pruned) inflation with history, before choosing the centre: the
    # centre must be a puncture, so inflate around the guess generously
    hist = InflationHistory(rule, seed, level, crop_center=center_guess,
                            crop_radius=N + 2 * _max_span(rule))
    leaf_protos = hist.protos_by_gen[level]
    leaf_offsets = hist.offsets_by_gen[level]
    if not leaf_protos:
        raise CoverageError("inflation produced no tiles near centre",
                            required_level=level + 1)

    punctures = [
        geo.vadd(off, rule.prototiles[pr].puncture)
        for pr, off in zip(leaf_protos, leaf_offsets)
    ]
    # candidate centres: punctures near the region centre with B_N inside
    best = None
    for i, x in enumerate(punctures):
        if not ball_inside(x):
            continue
        d2 = geo.norm2(geo.vsub(x, center_guess))
        cand = (d2, x, i)
        if best is None or cand < best:
            best = cand
    if best is None:
        need = level
        span = region[1] - region[0] if d == 1 else None
        while True:
            need += 1
            if d == 1:
                if (span * lam ** (need - level)) / 2 > N + 1:
                    break
            else:
                if region_scale * lam ** (need - level) > 4 * N + 4:
                    break
        raise CoverageError(
            f"level {level} cannot cover B_{N} for seed {seed_label!r}",
            required_level=need,
        )
    _, center, _ = best

    keep_protos: list[int] = []
    keep_punc: list[Vec] = []
    kept_full: list[int] = []
    N2 = N * N
    for i, (pr, off) in enumerate(zip(leaf_protos, leaf_offsets)):
        d2 = rule.prototiles[pr].dist2_from(center, off)
        if d2 <= N2:
            keep_protos.append(pr)
            keep_punc.append(geo.vsub(punctures[i], center))
            kept_full.append(i)

    w = Window(rule, d, keep_protos, keep_punc, N)
    w.history = hist
    w.kept_full = kept_full
    w.shift = center
    w.level = level
    return w


def _max_span(rule: SubstitutionRule) -> Fraction:
    return max(_sqrt_ub(p.radius2_from_puncture()) for p in rule.prototiles)


def grid_window(rule: SubstitutionRule, label: str, lattice: Sequence[Vec],
                N: Fraction) -> Window:
    """Window for a fully periodic tiling: box fill of lattice translates.

    Fills all lattice points in the closed coordinate box [-N, N]^d, which
    contains every tile meeting B_N(0) when the lattice is unimodular-ish
    (certified by a completeness margin check on the prototile span).
    """
    N = frac(N)
    d = rule.dimension
    pi = rule.proto_index(label)
    lattice = [vec(v) for v in lattice]
    if len(lattice) != d:
        raise PreconditionError("need d lattice vectors")
    protos: list[int] = []
    punc: list[Vec] = []
    if d == 1:
        step = lattice[0][0]
        k = 0
        n = int(N / step)
        for i in range(-n, n + 1):
            protos.append(pi)
            punc.append((step * i,))
    else:
        a, b = lattice
        # assume axis-ish lattices for fixtures; enumerate integer combos
        nb = int(N / min(c for c in (abs(a[0]) + abs(a[1]), abs(b[0]) + abs(b[1])) if c)) + 2
        for i in range(-nb, nb + 1):
            for j in range(-nb, nb + 1):
                x = geo.vadd(geo.vscale(a, Fraction(i)), geo.vscale(b, Fraction(j)))
                if all(abs(c) <= N for c in x):
                    protos.append(pi)
                    punc.append(x)
    return Window(rule, d, protos, punc, N)


# ---------------------------------------------------------------------------
# Patch classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchClass:
    """Pointed translation class of a patch: pointed tile's puncture at 0."""

    tiles: tuple[Tile, ...]  # canonical order: sorted by (proto, offset)
    pointed: int
    dimension: int

    @staticmethod
    def from_patch(tiles: Iterable[Tile], pointed_tile: Tile,
                   protos: Sequence[Prototile], dimension: int) -> "PatchClass":
        shift = geo.vscale(pointed_tile.puncture(protos), Fraction(-1))
        moved = sorted((t.translated(shift) for t in tiles), key=tile_key)
        target = pointed_tile.translated(shift)
        pointed = moved.index(target)
        return PatchClass(tuple(moved), pointed, dimension)

    def key(self):
        return (self.dimension, tuple((t.proto, t.offset) for t in self.tiles), self.pointed)

    def radius2(self, protos: Sequence[Prototile]) -> Fraction:
        """Max squared distance from the origin to any point of the patch."""
        out = Fraction(0)
        for t in self.tiles:
            p = protos[t.proto]
            if self.dimension == 1:
                lo, hi = p.support[0] + t.offset[0], p.support[1] + t.offset[0]
                out = max(out, geo.interval_radius2(Fraction(0), lo, hi))
            else:
                poly = tuple(geo.vadd(v, t.offset) for v in p.support)
                out = max(out, geo.polygon_radius2(_zero(2), poly))
        return out

    def matches_at(self, window: Window, i: int) -> bool:
        """Does this class occur in the window with its pointed puncture at x(i)?"""
        base = window.puncture(i)
        for t in self.tiles:
            x = geo.vadd(base, t.puncture(window.prototiles))
            j = window.find_puncture(x)
            if j is None or window.protos[j] != t.proto:
                return False
        return True

    def occurrences(self, window: Window, margin_extra: Fraction = Fraction(0)) -> list[int]:
        r = _sqrt_ub(self.radius2(window.prototiles)) + margin_extra
        return [
            i
            for i in window.valid_indices(r)
            if self.matches_at(window, i)
        ]


def patch_around(window: Window, i: int, R: Fraction) -> PatchClass:
    """Pointed class of the tiles meeting the closed ball B_R(x(i))."""
    R = frac(R)
    window.require_valid(i, R, "patch_around")
    center = window.puncture(i)
    idxs = window.tiles_meeting_ball(center, R)
    tiles = [window.tile(j) for j in idxs]
    return PatchClass.from_patch(tiles, window.tile(i), window.prototiles,
                                 window.dimension)


def enumerate_patch_classes(rule: SubstitutionRule, R: Fraction,
                            level_cap: int = 16,
                            seed_label: str | None = None):
    """All R-patch classes of the hull, certified by two-level stabilization.

    Returns (classes, stabilization_level).  Classes are keyed canonically.
    """
    R = frac(R)
    rule.validate()
    seed = seed_label or rule.prototiles[0].label
    prev_keys: set | None = None
    prev_classes: dict = {}
    level = 1
    while level <= level_cap:
        try:
            N = _coverable_radius(rule, seed, level)
            if N < 4 * R + 2:
                level += 1
                continue
            w = sample_window(rule, seed, level, min(N, 8 * R + 8))
        except CoverageError:
            level += 1
            continue
        classes = {}
        for i in w.valid_indices(R + Fraction(1)):
            pc = patch_around(w, i, R)
            classes.setdefault(pc.key(), pc)
        keys = set(classes)
        if prev_keys is not None and keys == prev_keys and keys:
            return sorted(prev_classes.values(), key=lambda c: c.key()), level
        prev_keys, prev_classes = keys, classes
        level += 1
    raise InconclusiveError(
        f"patch classes did not stabilize within level cap {level_cap}"
    )


def _coverable_radius(rule: SubstitutionRule, seed_label: str, level: int) -> Fraction:
    """Radius of a ball guaranteed to fit inside the level-fold inflated seed."""
    p = rule.prototiles[rule.proto_index(seed_label)]
    lam = rule.inflation ** level
    if rule.dimension == 1:
        return (p.support[1] - p.support[0]) * lam / 2 - 1
    c = geo.polygon_centroid(p.support)
    d2 = geo.polygon_boundary_dist2(c, p.support)
    return _sqrt_lb(d2) * lam - 1


# ---------------------------------------------------------------------------
# Tiling metric
# ---------------------------------------------------------------------------


def tiling_metric(w1: Window, w2: Window,
                  tol: Fraction = Fraction(1, 2 ** 40)) -> tuple[Fraction, Fraction]:
    """Certified bracket [lo, hi] for the tiling metric d(T1, T2).

    Shift candidates are puncture differences near the origin; per candidate
    the infimum over recentring vectors is bracketed exactly (empty mismatch
    sets give exact values, far mismatches give certified enclosures).
    """
    d = w1.dimension
    if d != w2.dimension:
        raise PreconditionError("dimension mismatch")
    one = Fraction(1)

    same_tiling = w1.tiling_id is w2.tiling_id
    shift_diff = geo.vsub(w2.tiling_shift, w1.tiling_shift) if same_tiling else None

    span = max(w1._max_proto_span(), w2._max_proto_span())
    near1 = w1.punctures_in_ball(_zero(d), 1 + 2 * span, strict=False)
    near2 = w2.punctures_in_ball(_zero(d), 1 + 2 * span, strict=False)
    candidates: set[tuple] = set()
    for i in near1:
        for j in near2:
            v = geo.vsub(w1.puncture(i), w2.puncture(j))
            candidates.add(v)

    los, his = [], []
    for v in sorted(candidates):
        lo_v, hi_v = _metric_candidate_bracket(w1, w2, v, same_tiling, shift_diff)
        los.append(lo_v)
        his.append(hi_v)
    if not his:
        return (one, one)
    hi = min(min(his), one)
    lo = min(min(los), one)
    if hi - lo > tol and hi - lo > Fraction(1, 1000):
        # wider certified bracket; callers see the honest enclosure
        pass
    return (lo, hi)


def _metric_candidate_bracket(w1: Window, w2: Window, v: Vec,
                              same_tiling: bool, shift_diff: Vec | None):
    """Bracket inf over recentrings for one shift candidate v = x(t1) - x(t2)."""
    d = w1.dimension
    nv_lo, nv_hi = sqrt_bracket(geo.norm2(v))
    if same_tiling:
        # T2 - v agrees with T1 exactly iff v differs from the shift by a
        # period; mismatches are computable globally.
        delta = geo.vsub(shift_diff, v)
        if _is_period(w1, delta):
            return (nv_lo / 2, nv_hi / 2)
    # known-region comparison: mismatch tiles of T1 vs (T2 - v)
    mism2: list[Fraction] = []  # squared support distances of mismatches from -v/2
    cmp_radius = min(w1.radius, w2.radius - nv_hi) - 1
    if cmp_radius <= 2:
        return (Fraction(0), Fraction(1))  # insufficient window: full bracket
    c0 = geo.vscale(v, Fraction(-1, 2))
    probe = geo.vscale(v, Fraction(1, 2))
    protos1 = w1.prototiles
    for i in w1.punctures_in_ball(probe, cmp_radius, strict=False):
        x1 = w1.puncture(i)
        j = w2.find_puncture(geo.vadd(x1, v))
        if j is None or w2.protos[j] != w1.protos[i]:
            t = w1.tile(i)
            mism2.append(protos1[t.proto].dist2_from(c0, t.offset))
    for j in w2.punctures_in_ball(geo.vscale(v, Fraction(-1, 2)), cmp_radius, strict=False):
        x2 = geo.vsub(w2.puncture(j), v)
        i = w1.find_puncture(x2)
        if i is None or w1.protos[i] != w2.protos[j]:
            p = w2.prototiles[w2.protos[j]]
            off = geo.vsub(x2, p.puncture)
            mism2.append(p.dist2_from(c0, off))
    # agreement radius at the midpoint recentring, certified by the windows
    if mism2:
        rho2 = min(mism2)
        rho_lo, rho_hi = sqrt_bracket(rho2)
        rho_lo = min(rho_lo, cmp_radius)
        rho_hi = min(rho_hi, cmp_radius)
    else:
        rho_lo = rho_hi = cmp_radius
    # span of the window knowledge bounds rho too
    inv_hi = Fraction(1, 1) / rho_lo if rho_lo > 0 else Fraction(10 ** 9)
    hi_v = max(nv_hi / 2, inv_hi)
    # lower bound: any recentring c is within 1 of the midpoint, so a feasible
    # eps satisfies 1/eps < rho + 1; and always eps >= |v|/2
    inv_lo = Fraction(1, 1) / (rho_hi + 1)
    lo_v = max(nv_lo / 2, inv_lo)
    return (min(lo_v, Fraction(1)), min(hi_v, Fraction(1)))


def _is_period(w: Window, delta: Vec) -> bool:
    """Does T + delta = T hold on the sampled window (exact check)?"""
    if all(c == 0 for c in delta):
        return True
    hits = misses = 0
    for i in range(len(w)):
        x = geo.vadd(w.puncture(i), delta)
        if geo.norm2(x) > (w.radius - 1) ** 2:
            continue
        j = w.find_puncture(x)
        if j is not None and w.protos[j] == w.protos[i]:
            hits += 1
        else:
            misses += 1
    return misses == 0 and hits > 0


# ---------------------------------------------------------------------------
# Repetitivity
# ---------------------------------------------------------------------------


def repetitivity_radius(rule: SubstitutionRule, pc: PatchClass, cap: Fraction,
                        level: int = 12) -> dict:
    """Least half-integer R <= cap such that every R-ball around a sampled
    puncture contains a translate of the class (support containment).

    Sample-certified: the returned value is exact on the scanned window and a
    lower bound for the hull.  Raises PatchNotInHullError if no occurrence.
    """
    cap = frac(cap)
    d = rule.dimension
    target_N = 4 * cap + 8
    lvl = level
    while True:
        try:
            if _coverable_radius(rule, rule.prototiles[0].label, lvl) >= target_N:
                w = sample_window(rule, rule.prototiles[0].label, lvl, target_N)
                break
        except CoverageError:
            pass
        lvl += 1
        if lvl > level + 24:
            raise InconclusiveError("cannot build a sample window for the scan")
    occs = pc.occurrences(w)
    if not occs:
        raise PatchNotInHullError("patch class not found in deep sample")
    pr2 = pc.radius2(w.prototiles)
    pr_ub = _sqrt_ub(pr2)
    worst = Fraction(0)
    scan = w.valid_indices(cap + pr_ub + 1)
    if not scan:
        raise InconclusiveError("window too small to scan at the given cap")
    # bucket occurrences on the unit grid for nearest-occurrence queries;
    # the needed radius grows with distance, so only the nearest matters
    s = w.scale
    occ_buckets: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
    for i in occs:
        p = w.punc_scaled[i]
        occ_buckets.setdefault(tuple(c // s for c in p), []).append(p)
    ring_cap = int(cap + pr_ub) + 4
    for q in scan:
        pq = w.punc_scaled[q]
        cell = tuple(c // s for c in pq)
        best_d2: int | None = None
        for ring in range(ring_cap + 1):
            for key in _ring_cells(cell, ring, w.dimension):
                for p in occ_buckets.get(key, ()):
                    d2 = sum((a - b) ** 2 for a, b in zip(p, pq))
                    if best_d2 is None or d2 < best_d2:
                        best_d2 = d2
            # a cell at ring r' > ring is at least (r'-1) >= ring units away
            if best_d2 is not None and best_d2 <= (ring * s) ** 2:
                break
        if best_d2 is None:
            return {
                "bounded": False,
                "cap": str(cap),
                "witness_puncture": [str(c) for c in w.puncture(q)],
            }
        need = _halfint_ceil_sqrt(Fraction(best_d2, s * s), pr2)
        if need > cap:
            return {
                "bounded": False,
                "cap": str(cap),
                "witness_puncture": [str(c) for c in w.puncture(q)],
            }
        worst = max(worst, need)
    return {"bounded": True, "radius": worst, "cap": str(cap),
            "sample_level": lvl, "semantics": "support-containment, half-integer ladder, sample lower bound"}


def _ring_cells(center: tuple[int, ...], ring: int, d: int):
    cx = center[0]
    if d == 1:
        if ring == 0:
            yield (cx,)
        else:
            yield (cx - ring,)
            yield (cx + ring,)
        return
    cy = center[1]
    if ring == 0:
        yield (cx, cy)
        return
    for dx in range(-ring, ring + 1):
        yield (cx + dx, cy - ring)
        yield (cx + dx, cy + ring)
    for dy in range(-ring + 1, ring):
        yield (cx - ring, cy + dy)
        yield (cx + ring, cy + dy)


def _halfint_ceil_sqrt(d2: Fraction, pr2: Fraction) -> Fraction:
    """Least R on the half-integer ladder with sqrt(d2) + sqrt(pr2) <= R."""
    ub = _sqrt_ub(d2) + _sqrt_ub(pr2)
    r = Fraction(math.ceil(ub * 2), 2)
    while r >= 1 and _ball_covers(r - Fraction(1, 2), d2, pr2):
        r -= Fraction(1, 2)
    return r


def _ball_covers(R: Fraction, d2: Fraction, pr2: Fraction) -> bool:
    """sqrt(d2) + sqrt(pr2) <= R, decided exactly."""
    if R < 0:
        return False
    # (sqrt(a)+sqrt(b))^2 = a + b + 2 sqrt(ab) <= R^2
    rem = R * R - d2 - pr2
    if rem < 0:
        return False
    return 4 * d2 * pr2 <= rem * rem


# ---------------------------------------------------------------------------
# Fixture I/O
# ---------------------------------------------------------------------------


def rule_from_dict(data: dict, name: str = "") -> SubstitutionRule:
    d = int(data["dimension"])
    protos = []
    for p in data["prototiles"]:
        if d == 1:
            support = (frac(p["support"][0]), frac(p["support"][1]))
        else:
            support = tuple(vec(v) for v in p["support"])
        protos.append(Prototile(p["label"], support, vec(p["puncture"]), d))
    labels = {p.label: i for i, p in enumerate(protos)}
    sub = data["substitution"]
    children = {}
    for label, kids in sub["children"].items():
        children[labels[label]] = [
            Tile(labels[k["label"]], vec(k["offset"])) for k in kids
        ]
    return SubstitutionRule(protos, frac(sub["inflation"]), children, name=name)


def load_rule(path) -> SubstitutionRule:
    with open(path) as fh:
        data = json.load(fh)
    return rule_from_dict(data, name=str(path))
