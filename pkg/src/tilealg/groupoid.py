"""Sampled translation groupoid of a tiling window.

Arrows live on one orbit: a window puncture u stands for the tiling T - x(u),
and the arrow (T - x(v), T - x(u)) is the pair (src=u, rng=v) with vector
x(v) - x(u).  Compact arrow sets are either balls (all translates of
magnitude strictly below a radius) or finite unions of basic bisections
V(P, t, t'); every count below is an exact hull count provided the stated
margins hold, and a MarginError is raised otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from . import geometry as geo
from .errors import (
    CompositionError,
    MarginError,
    PreconditionError,
    UndefinedRatioError,
)
from .geometry import Vec, frac
from .tiling import PatchClass, Window, _sqrt_ub


@dataclass(frozen=True)
class SampledArrow:
    src: int
    rng: int

    def vector(self, window: Window) -> Vec:
        return geo.vsub(window.puncture(self.rng), window.puncture(self.src))


def compose(a: SampledArrow, b: SampledArrow) -> SampledArrow:
    """a after b: defined when src(a) = rng(b); vectors add."""
    if a.src != b.rng:
        raise CompositionError(f"src(a)={a.src} != rng(b)={b.rng}")
    return SampledArrow(b.src, a.rng)


def invert(a: SampledArrow) -> SampledArrow:
    return SampledArrow(a.rng, a.src)


@dataclass(frozen=True)
class CylinderSet:
    """U(P, t): tilings containing the patch with tile t's puncture at 0."""

    P: PatchClass
    t: int

    def __post_init__(self):
        if not 0 <= self.t < len(self.P.tiles):
            raise PreconditionError("cylinder tile index out of range")

    def anchor_vec(self, window: Window) -> Vec:
        return self.P.tiles[self.t].puncture(window.prototiles)

    def match_radius(self, window: Window) -> Fraction:
        """Margin needed to test membership at a puncture."""
        anchor = self.anchor_vec(window)
        r2 = Fraction(0)
        for s in self.P.tiles:
            p = window.prototiles[s.proto]
            if self.P.dimension == 1:
                lo = p.support[0] + s.offset[0] - anchor[0]
                hi = p.support[1] + s.offset[0] - anchor[0]
                r2 = max(r2, geo.interval_radius2(Fraction(0), lo, hi))
            else:
                poly = tuple(geo.vadd(v, geo.vsub(s.offset, anchor)) for v in p.support)
                r2 = max(r2, geo.polygon_radius2((Fraction(0), Fraction(0)), poly))
        return _sqrt_ub(r2)

    def contains(self, window: Window, u: int) -> bool:
        base = geo.vsub(window.puncture(u), self.anchor_vec(window))
        for s in self.P.tiles:
            j = window.find_puncture(geo.vadd(base, s.puncture(window.prototiles)))
            if j is None or window.protos[j] != s.proto:
                return False
        return True


@dataclass(frozen=True)
class BisectionSet:
    """V(P, t, t'): arrows from U(P, t) to U(P, t')."""

    P: PatchClass
    t: int
    t_prime: int

    def source(self) -> CylinderSet:
        return CylinderSet(self.P, self.t)

    def range(self) -> CylinderSet:
        return CylinderSet(self.P, self.t_prime)

    def vector(self, window: Window) -> Vec:
        protos = window.prototiles
        return geo.vsub(
            self.P.tiles[self.t_prime].puncture(protos),
            self.P.tiles[self.t].puncture(protos),
        )


class CompactSet:
    """Ball(R) (strict |z| < R, inverse closed, contains the units) or a
    finite union of basic bisections."""

    def __init__(self, kind: str, radius: Fraction | None = None,
                 components: Sequence[BisectionSet] | None = None):
        if kind not in ("ball", "union"):
            raise PreconditionError("kind must be 'ball' or 'union'")
        self.kind = kind
        self.radius = frac(radius) if radius is not None else None
        self.components = tuple(components) if components is not None else None
        if kind == "ball" and (self.radius is None or self.radius <= 0):
            raise PreconditionError("ball needs a positive radius")
        if kind == "union" and not self.components:
            raise PreconditionError("union needs at least one bisection")

    @staticmethod
    def ball(R) -> "CompactSet":
        return CompactSet("ball", radius=R)

    @staticmethod
    def union(components: Iterable[BisectionSet]) -> "CompactSet":
        return CompactSet("union", components=tuple(components))

    def is_units_only(self, window: Window) -> bool:
        if self.kind == "ball":
            return self.radius * self.radius <= window.gap2
        return all(all(c == 0 for c in b.vector(window)) for b in self.components)

    def source_margin(self, window: Window) -> Fraction:
        if self.kind == "ball":
            return self.radius
        return max(b.source().match_radius(window) for b in self.components)

    def range_margin(self, window: Window) -> Fraction:
        if self.kind == "ball":
            return self.radius
        out = Fraction(0)
        for b in self.components:
            v = b.vector(window)
            out = max(out, b.source().match_radius(window) + _sqrt_ub(geo.norm2(v)))
        return out

    # -- fibres -------------------------------------------------------------

    def fibre_targets(self, window: Window, u: int, check_margin: bool = True) -> set[int]:
        """Targets of Cu = {arrows in C with source u}."""
        if check_margin:
            window.require_valid(u, self.source_margin(window), "fibre")
        if self.kind == "ball":
            return set(window.punctures_in_ball(window.puncture(u), self.radius, strict=True))
        out: set[int] = set()
        for b in self.components:
            if b.source().contains(window, u):
                j = window.find_puncture(geo.vadd(window.puncture(u), b.vector(window)))
                if j is None:
                    raise MarginError("bisection range fell outside the window")
                out.add(j)
        return out

    def cofibre_sources(self, window: Window, u: int, check_margin: bool = True) -> set[int]:
        """Sources of uC = {arrows in C with range u}."""
        if check_margin:
            window.require_valid(u, self.range_margin(window), "cofibre")
        if self.kind == "ball":
            return set(window.punctures_in_ball(window.puncture(u), self.radius, strict=True))
        out: set[int] = set()
        for b in self.components:
            v = b.vector(window)
            src_x = geo.vsub(window.puncture(u), v)
            j = window.find_puncture(src_x)
            if j is not None and b.source().contains(window, j):
                out.add(j)
        return out


@dataclass(frozen=True)
class SampledFibre:
    unit: int
    arrows: frozenset[SampledArrow]
    margin: Fraction

    def targets(self) -> set[int]:
        return {a.rng for a in self.arrows}

    def __len__(self) -> int:
        return len(self.arrows)


def membership(g: SampledArrow, C: CompactSet, window: Window) -> bool:
    """Exact membership of an arrow in a compact set (strict ball norm)."""
    if C.kind == "ball":
        v = g.vector(window)
        return geo.norm2(v) < C.radius * C.radius
    window.require_valid(g.src, C.source_margin(window), "membership")
    vg = g.vector(window)
    for b in C.components:
        if b.vector(window) == vg and b.source().contains(window, g.src):
            return True
    return False


def fibre(window: Window, u: int, C: CompactSet) -> SampledFibre:
    """Cu: the complete set of arrows of C with source u."""
    targets = C.fibre_targets(window, u)
    return SampledFibre(
        u, frozenset(SampledArrow(u, w) for w in targets), C.source_margin(window)
    )


def cofibre(window: Window, u: int, C: CompactSet) -> SampledFibre:
    """uC: the complete set of arrows of C with range u."""
    sources = C.cofibre_sources(window, u)
    return SampledFibre(
        u, frozenset(SampledArrow(w, u) for w in sources), C.range_margin(window)
    )


# ---------------------------------------------------------------------------
# Counting: products, inner parts, boundaries, invariance
# ---------------------------------------------------------------------------


def left_product_targets(targets: set[int], C: CompactSet, window: Window) -> set[int]:
    """Targets of C * A at a fixed unit, A given by its fibre targets."""
    out: set[int] = set()
    for v in targets:
        out |= C.fibre_targets(window, v)
    return out


def inner_part(targets: set[int], C: CompactSet, window: Window) -> set[int]:
    """I_C(Au) = {a in Au : Ca subset of Au}, via fibre targets."""
    out = set()
    for v in targets:
        if C.fibre_targets(window, v) <= targets:
            out.add(v)
    return out


def boundary(targets: set[int], C: CompactSet, window: Window, u: int) -> set[int]:
    """d_C(Au) = arrows g (from u) with Cg meeting both Au and its complement.

    Returned as target indices; finite and contained in C^{-1} Au.
    """
    if C.is_units_only(window):
        return set()
    # candidate ranges w: C-fibre at w must reach into Au
    candidates: set[int] = set()
    for z in targets:
        candidates |= C.cofibre_sources(window, z)
    out = set()
    for w in candidates:
        reach = C.fibre_targets(window, w)
        if not reach:
            continue
        if (reach & targets) and (reach - targets):
            out.add(w)
    return out


def invariance_ratio_i(targets: set[int], C: CompactSet, window: Window) -> Fraction:
    """|C Au \\ Au| / |Au| as an exact rational."""
    if not targets:
        raise UndefinedRatioError("empty fibre")
    grown = left_product_targets(targets, C, window)
    return Fraction(len(grown - targets), len(targets))


def invariance_ratio_ii(targets: set[int], C: CompactSet, window: Window) -> Fraction:
    """1 - |I_C(Au)| / |Au| as an exact rational."""
    if not targets:
        raise UndefinedRatioError("empty fibre")
    return 1 - Fraction(len(inner_part(targets, C, window)), len(targets))


def invariance_constants(C: CompactSet, window: Window) -> tuple[int, int]:
    """(c1, c2) = (sup_w |Cw|, sup_v |vC|) over valid window units."""
    margin = max(C.source_margin(window), C.range_margin(window))
    units = window.valid_indices(margin)
    if not units:
        raise MarginError("no valid units at the required margin",
                          required_radius=margin)
    c1 = max(len(C.fibre_targets(window, u, check_margin=False)) for u in units)
    c2 = max(len(C.cofibre_sources(window, u, check_margin=False)) for u in units)
    return c1, c2


def sandwich_holds(targets: set[int], C: CompactSet, window: Window) -> dict:
    """Exact check of (1/c1)|CAu\\Au| <= |{a : Ca not subset Au}| <= c2 |CAu\\Au|."""
    c1, c2 = invariance_constants(C, window)
    grown = left_product_targets(targets, C, window)
    lhs = len(grown - targets)
    mid = len(targets) - len(inner_part(targets, C, window))
    ok = lhs <= c1 * mid and mid <= c2 * lhs
    return {
        "c1": c1,
        "c2": c2,
        "grown_minus": lhs,
        "not_inner": mid,
        "holds": ok,
    }


def fibre_report(window: Window, u: int, A: CompactSet, C: CompactSet) -> dict:
    """JSON-ready invariance report for one unit."""
    targets = A.fibre_targets(window, u)
    ratio_i = invariance_ratio_i(targets, C, window)
    ratio_ii = invariance_ratio_ii(targets, C, window)
    c1, c2 = invariance_constants(C, window)
    margin = A.source_margin(window) + 2 * C.source_margin(window)
    return {
        "unit": u,
        "setA": {"kind": A.kind, "size": len(targets)},
        "setC": {"kind": C.kind},
        "ratios": {"i": str(ratio_i), "ii": str(ratio_ii)},
        "constants": {"c1": c1, "c2": c2},
        "margin": str(margin),
    }
