"""Even coverings, greedy disjointification, and the Ornstein-Weiss style
quasitiling recursion, all fibrewise over window units.

The recursion is per-unit and deterministic: members are processed in
descending cardinality with canonical tie-break, each kept translate must be
(1 - eps)-fresh relative to the previously kept ones, and entire recursion
steps live inside the remainder of the previous steps, so the explicit
hat-sets taken in construction order certify eps-disjointness exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (
    EvenCoveringError,
    InvarianceError,
    MarginError,
    PreconditionError,
)
from .geometry import frac
from .groupoid import CompactSet, inner_part
from .tiling import SubstitutionRule, Window, sample_window, grid_window


# ---------------------------------------------------------------------------
# Even coverings
# ---------------------------------------------------------------------------


@dataclass
class EvenCovering:
    """A lambda-even covering of one fibre Au with a stated multiplicity."""

    unit: int
    members: list[frozenset[int]]
    lam: Fraction
    multiplicity: int


def check_even_covering(members: list[frozenset[int]] | list[set[int]],
                        Au: set[int], lam: Fraction, M: int) -> dict:
    """Verdict plus the two witnessed inequalities, with exact values."""
    lam = frac(lam)
    counts: dict[int, int] = {}
    total = 0
    inside = True
    for m in members:
        total += len(m)
        if not set(m) <= Au:
            inside = False
        for x in m:
            counts[x] = counts.get(x, 0) + 1
    max_mult = max(counts.values()) if counts else 0
    mass_ok = Fraction(total) >= lam * M * len(Au)
    mult_ok = max_mult <= M
    return {
        "members_inside": inside,
        "max_multiplicity": max_mult,
        "multiplicity_bound": M,
        "multiplicity_ok": mult_ok,
        "total_mass": total,
        "mass_required": str(lam * M * len(Au)),
        "mass_ok": mass_ok,
        "pass": inside and mult_ok and mass_ok,
    }


def disjointify(members: list[tuple[object, frozenset[int]]], epsilon: Fraction,
                lam: Fraction, Au: set[int], multiplicity: int | None = None,
                check: bool = True) -> dict:
    """Greedy eps-disjoint subfamily that (eps*lam)-covers Au.

    `members` is an ordered list of (key, target-set) pairs; processing order
    is descending cardinality with ties broken by list position.  Returns kept
    keys, their hat-sets (member minus previously kept members), and the
    covered set.  Raises EvenCoveringError when `check` is set and the family
    is not the declared lambda-even covering.
    """
    epsilon = frac(epsilon)
    lam = frac(lam)
    if not (0 <= epsilon <= Fraction(1, 2)):
        raise PreconditionError("disjointify needs 0 <= epsilon <= 1/2")
    if check:
        M = multiplicity if multiplicity is not None else len(members)
        rep = check_even_covering([m for _, m in members], Au, lam, M)
        if not rep["pass"]:
            raise EvenCoveringError(f"family is not a {lam}-even covering: {rep}")
    order = sorted(range(len(members)), key=lambda i: (-len(members[i][1]), i))
    kept_keys = []
    hats = []
    covered: set[int] = set()
    for i in order:
        key, m = members[i]
        hat = m - covered
        if len(hat) * 1 >= (1 - epsilon) * len(m) and m:
            kept_keys.append(key)
            hats.append(frozenset(hat))
            covered |= m
    return {
        "kept": kept_keys,
        "hats": hats,
        "covered": covered,
        "cover_fraction": Fraction(len(covered), len(Au)) if Au else Fraction(0),
        "cover_required": epsilon * lam,
    }


# ---------------------------------------------------------------------------
# Translate coverings (Lemma: {Ca : a in I_C(A)} is (1-delta)-even)
# ---------------------------------------------------------------------------


def translate_covering(window: Window, units: list[int], A: CompactSet,
                       C: CompactSet, epsilon: Fraction) -> dict:
    """Certified translate covering of A by C-translates, fibre by fibre."""
    epsilon = frac(epsilon)
    c1_c2 = _c_bounds(window, C)
    inf_c, sup_c = c1_c2
    M = sup_c
    delta = max(Fraction(0), 1 - Fraction(inf_c, sup_c) * (1 - epsilon))
    lam = 1 - delta
    per_unit = {}
    for u in units:
        targets = A.fibre_targets(window, u)
        if not targets:
            per_unit[u] = {"skipped": True, "reason": "empty fibre"}
            continue
        inner = inner_part(targets, C, window)
        if len(inner) < (1 - epsilon) * len(targets):
            raise InvarianceError(
                f"A is not (C,{epsilon})-invariant at unit {u}",
                worst_unit=u,
                ratio=1 - Fraction(len(inner), len(targets)),
            )
        members = [
            (v, frozenset(C.fibre_targets(window, v)))
            for v in sorted(inner, key=lambda i: window.punc_scaled[i])
        ]
        report = check_even_covering([m for _, m in members], targets, lam, M)
        if not report["pass"]:
            raise EvenCoveringError(
                f"translate covering certificate failed at unit {u}: {report}"
            )
        per_unit[u] = {
            "skipped": False,
            "covering": EvenCovering(u, [m for _, m in members], lam, M),
            "centre_candidates": [k for k, _ in members],
            "report": report,
        }
    return {"lambda": lam, "delta": delta, "multiplicity": M, "per_unit": per_unit}


def _c_bounds(window: Window, C: CompactSet) -> tuple[int, int]:
    margin = max(C.source_margin(window), C.range_margin(window))
    units = window.valid_indices(margin)
    if not units:
        raise MarginError("no valid units for C-fibre bounds", required_radius=margin)
    sizes = [len(C.fibre_targets(window, u, check_margin=False)) for u in units]
    return min(sizes), max(sizes)


# ---------------------------------------------------------------------------
# Tile sequences
# ---------------------------------------------------------------------------


@dataclass
class TileSequence:
    """Nested ball tiles with the empirical certificates of the OW theorem."""

    radii: list[Fraction]
    m: int
    epsilon: Fraction
    certificate: dict = field(default_factory=dict)

    def tiles(self) -> list[CompactSet]:
        return [CompactSet.ball(r) for r in self.radii]

    @property
    def top_radius(self) -> Fraction:
        return self.radii[-1]


def stopping_length(epsilon: Fraction, m: int) -> int:
    """Least n with (1 - eps/m)^n < eps, computed with exact rationals."""
    epsilon = frac(epsilon)
    q = 1 - epsilon / m
    p = Fraction(1)
    n = 0
    while p >= epsilon:
        p *= q
        n += 1
    return n


def analytic_boundary_constant(rule: SubstitutionRule, n: Fraction, k: Fraction) -> Fraction:
    """Volume bound C_{n,k} for the boundary ratio of nested translate balls."""
    d = rule.dimension
    vmax = rule.max_measure()
    vmin = rule.min_measure()
    dmax = _max_diam_ub(rule)
    top = vmax * ((2 * n + k + dmax) ** d - max(Fraction(0), k - dmax) ** d)
    bot = vmin * (n + k - dmax) ** d
    if bot <= 0:
        return Fraction(10 ** 9)
    return top / bot


def _max_diam_ub(rule: SubstitutionRule) -> Fraction:
    from .tiling import _sqrt_ub

    best = Fraction(0)
    for p in rule.prototiles:
        if rule.dimension == 1:
            best = max(best, p.support[1] - p.support[0])
        else:
            verts = p.support
            d2 = max(
                sum((a - b) ** 2 for a, b in zip(v, w))
                for v in verts
                for w in verts
            )
            best = max(best, _sqrt_ub(d2))
    return best


def build_tile_sequence(rule: SubstitutionRule, epsilon: Fraction, L: int,
                        window: Window | None = None,
                        base_radius: Fraction = Fraction(1)) -> TileSequence:
    """Ball tile sequence T_1 ... T_L with window-certified OW hypotheses.

    Index growth follows the least empirical k whose boundary ratio passes
    eps^2/8 on every sufficiently deep unit; the analytic volume constant is
    only a search ceiling.  The theoretical stopping length for a guaranteed
    (1 - eps)-cover is recorded; when L is shorter, the recorded lambda
    schedule uses the provided length, and downstream runs rely on the
    exact verifier instead of the asymptotic guarantee.
    """
    epsilon = frac(epsilon)
    if not 0 < epsilon < Fraction(1, 2):
        raise PreconditionError("need 0 < epsilon < 1/2")
    if L < 1:
        raise PreconditionError("need L >= 1")
    rule.validate()
    ratio_vol = rule.max_measure() / rule.min_measure()
    m = int(max(ratio_vol, 2)) + 1
    if window is None:
        window = _default_cert_window(rule)

    radii: list[Fraction] = [frac(base_radius)]
    bound = Fraction(epsilon * epsilon, 8)
    per_index = []
    for i in range(1, L):
        prev = radii[-1]
        prev_ball = CompactSet.ball(prev)
        k = Fraction(1)
        ceiling = _analytic_ceiling(rule, prev, bound)
        while True:
            cur = prev + k
            probe = _deepest_unit(window, cur + 2 * prev + 1)
            if probe is None:
                raise MarginError(
                    f"window too small to certify boundary at radius {cur}",
                    required_radius=cur + 2 * prev + 1,
                )
            if _boundary_ratio_at(window, probe, prev_ball, cur) <= bound:
                ratio, checked = _boundary_ratio_max(window, prev_ball, cur)
                if ratio is not None and ratio <= bound:
                    per_index.append(
                        {
                            "index": i + 1,
                            "radius": str(cur),
                            "boundary_ratio_max": str(ratio),
                            "boundary_bound": str(bound),
                            "units_checked": checked,
                        }
                    )
                    radii.append(cur)
                    break
            if k > ceiling:
                raise MarginError(
                    "empirical boundary search exceeded the analytic ceiling",
                    required_radius=prev + ceiling,
                )
            k += 1

    cert = {
        "m": m,
        "epsilon": str(epsilon),
        "stop_length_theory": stopping_length(epsilon, m),
        "provided_length": L,
        "boundary": per_index,
        "ratios": [],
        "window_radius": str(window.radius),
    }
    # conditions (i) and (ii): fibre-size ratio bounds per tile
    for i, r in enumerate(radii):
        ball = CompactSet.ball(r)
        units = window.valid_indices(r)
        if not units:
            raise MarginError(f"no valid units for tile radius {r}", required_radius=r)
        sizes = [len(ball.fibre_targets(window, u, check_margin=False)) for u in units]
        inf_s, sup_s = min(sizes), max(sizes)
        ratio = Fraction(inf_s, sup_s)
        ok_i = Fraction(1, m) < ratio <= 1
        ok_ii = ratio * (1 - epsilon) >= Fraction(1, m)
        if not (ok_i and ok_ii):
            raise MarginError(
                f"tile radius {r} fails ratio conditions: inf {inf_s} sup {sup_s} m {m}"
            )
        cert["ratios"].append(
            {"index": i + 1, "radius": str(r), "inf_fibre": inf_s, "sup_fibre": sup_s}
        )
    lam_schedule = [
        str(min(1 - epsilon, 1 - (1 - Fraction(epsilon, m)) ** (L - kk + 1)))
        for kk in range(1, L + 1)
    ]
    cert["lambda_schedule_provided_length"] = lam_schedule
    return TileSequence(radii, m, epsilon, cert)


def _analytic_ceiling(rule: SubstitutionRule, n: Fraction, bound: Fraction) -> Fraction:
    k = Fraction(1)
    while analytic_boundary_constant(rule, n, k) > bound:
        k *= 2
        if k > 10 ** 7:
            raise PreconditionError("analytic boundary ceiling diverged")
    return k


def _deepest_unit(window: Window, margin: Fraction) -> int | None:
    if window.origin is not None and window.is_valid(window.origin, margin):
        return window.origin
    units = window.valid_indices(margin)
    return units[0] if units else None


def _boundary_ratio_at(window: Window, u: int, prev_ball: CompactSet,
                       cur: Fraction) -> Fraction:
    from .groupoid import boundary

    cur_ball = CompactSet.ball(cur)
    targets = cur_ball.fibre_targets(window, u, check_margin=False)
    bd = boundary(targets, prev_ball, window, u)
    return Fraction(len(bd), len(targets))


def _boundary_ratio_max(window: Window, prev_ball: CompactSet, cur: Fraction):
    """Max over well-margined units of |d_{T_prev}(T_cur w)| / |T_cur w|."""
    margin = cur + 2 * prev_ball.radius + Fraction(1, 2)
    units = window.valid_indices(margin)
    if not units:
        return None, 0
    worst = Fraction(0)
    seen: dict[tuple, Fraction] = {}
    for u in units:
        key = _fibre_signature(window, u, margin)
        if key in seen:
            ratio = seen[key]
        else:
            ratio = _boundary_ratio_at(window, u, prev_ball, cur)
            seen[key] = ratio
        worst = max(worst, ratio)
    return worst, len(units)


def _fibre_signature(window: Window, u: int, radius: Fraction) -> tuple:
    pu = window.punc_scaled[u]
    pts = window.punctures_in_ball(window.puncture(u), radius, strict=True)
    return tuple(
        tuple(a - b for a, b in zip(window.punc_scaled[v], pu)) for v in sorted(
            pts, key=lambda i: window.punc_scaled[i]
        )
    )


def _default_cert_window(rule: SubstitutionRule) -> Window:
    if rule.name.endswith("sq.json") or len(rule.prototiles) == 1:
        return grid_window(rule, rule.prototiles[0].label, _unit_lattice(rule), 12)
    level = 8
    while True:
        try:
            return sample_window(rule, rule.prototiles[0].label, level, 40)
        except Exception:
            level += 1
            if level > 20:
                raise


def _unit_lattice(rule: SubstitutionRule):
    if rule.dimension == 1:
        return [(Fraction(1),)]
    return [(Fraction(1), Fraction(0)), (Fraction(0), Fraction(1))]


# ---------------------------------------------------------------------------
# The quasitiling recursion
# ---------------------------------------------------------------------------


@dataclass
class FibreQuasitiling:
    unit: int
    translates: list[tuple[int, int]]  # (tile level 1-based, centre target index)
    covered: int
    fibre_size: int
    lambda_ledger: list[tuple[int, Fraction, Fraction]]  # (step, achieved, required)


@dataclass
class Quasitiling:
    tiles: TileSequence
    epsilon: Fraction
    A_radius: Fraction
    per_unit: dict[int, FibreQuasitiling]

    def centres(self, level: int) -> list[tuple[int, int]]:
        out = []
        for u, fq in sorted(self.per_unit.items()):
            out.extend((u, c) for lv, c in fq.translates if lv == level)
        return out


def smallest_invariant_ball(window: Window, C: CompactSet, bound: Fraction,
                            probe_unit: int | None = None,
                            max_halfsteps: int = 4000) -> Fraction:
    """Least half-integer R such that Ball(R) fibres are (C, bound)-invariant
    in the counting sense (ii) at a deep probe unit."""
    bound = frac(bound)
    u = probe_unit if probe_unit is not None else window.origin
    for num in range(1, max_halfsteps):
        RA = Fraction(2 * num + 1, 2)
        if RA + C.radius > window.radius:
            break
        A = CompactSet.ball(RA)
        if not window.is_valid(u, RA + C.radius):
            break
        targets = A.fibre_targets(window, u, check_margin=False)
        inner = inner_part(targets, C, window)
        if len(inner) >= (1 - bound) * len(targets):
            return RA
    raise MarginError("no invariant ball radius fits the window",
                      required_radius=window.radius * 2)


def ow_quasitile(window: Window, A: CompactSet, tiles: TileSequence,
                 epsilon: Fraction, units: list[int] | None = None,
                 dedup: bool = True, check_invariance: bool = True) -> Quasitiling:
    """Quasitile every valid fibre of A by the tile sequence.

    Mirrors the recursive construction: the base step covers with the largest
    tile, each later step works inside the remainder, skipping units whose
    remainder is already below eps * |Au|.  Fibres with identical local
    puncture patterns are solved once and replayed (`dedup`).
    """
    epsilon = frac(epsilon)
    if A.kind != "ball":
        raise PreconditionError("ow_quasitile expects a ball-shaped A")
    RA = A.radius
    RL = tiles.top_radius
    margin = RA + RL
    if units is None:
        units = window.valid_indices(margin)
        if not units:
            raise MarginError("no units are valid for the recursion",
                              required_radius=margin)
    else:
        for u in units:
            window.require_valid(u, margin, "ow_quasitile")

    if check_invariance:
        bound = Fraction(epsilon * epsilon, 4)
        _check_invariance_ii(window, units, A, tiles.tiles()[-1], bound)

    ball_objs = tiles.tiles()
    per_unit: dict[int, FibreQuasitiling] = {}
    cache: dict[tuple, list[tuple[int, tuple[int, ...]]]] = {}
    for u in units:
        if dedup:
            key = _fibre_signature(window, u, margin)
            hit = cache.get(key)
            if hit is not None:
                per_unit[u] = _replay(window, u, hit, A, ball_objs, epsilon, tiles)
                continue
        fq = _ow_fibre(window, u, A, ball_objs, epsilon, tiles)
        per_unit[u] = fq
        if dedup:
            pu = window.punc_scaled[u]
            rel = [
                (lv, tuple(a - b for a, b in zip(window.punc_scaled[c], pu)))
                for lv, c in fq.translates
            ]
            cache[key] = rel
    return Quasitiling(tiles, epsilon, RA, per_unit)


def _check_invariance_ii(window, units, A, top_tile, bound):
    worst = None
    seen: dict[tuple, Fraction] = {}
    margin = A.radius + top_tile.radius
    for u in units:
        key = _fibre_signature(window, u, margin)
        if key in seen:
            ratio = seen[key]
        else:
            targets = A.fibre_targets(window, u, check_margin=False)
            inner = inner_part(targets, top_tile, window)
            ratio = 1 - Fraction(len(inner), len(targets))
            seen[key] = ratio
        if worst is None or ratio > worst[1]:
            worst = (u, ratio)
    if worst is not None and worst[1] > bound:
        raise InvarianceError(
            f"A is not (T_n, {bound})-invariant: worst unit {worst[0]} has ratio {worst[1]}",
            worst_unit=worst[0],
            ratio=worst[1],
        )


def _ow_fibre(window: Window, u: int, A: CompactSet, balls: list[CompactSet],
              epsilon: Fraction, tiles: TileSequence) -> FibreQuasitiling:
    targets = A.fibre_targets(window, u, check_margin=False)
    total = len(targets)
    remaining = set(targets)
    covered: set[int] = set()
    out: list[tuple[int, int]] = []
    L = len(balls)
    m = tiles.m
    ledger = []
    for step in range(L, 0, -1):
        if step < L and len(remaining) < epsilon * total:
            break
        ball = balls[step - 1]
        cands = []
        for v in remaining:
            fib = ball.fibre_targets(window, v, check_margin=False)
            if fib <= remaining:
                cands.append((len(fib), window.punc_scaled[v], v))
        cands.sort(key=lambda t: (-t[0], t[1]))
        for size, _, v in cands:
            fib = ball.fibre_targets(window, v, check_margin=False)
            fresh = len(fib - covered)
            if fresh >= (1 - epsilon) * size:
                out.append((step, v))
                covered |= fib
        remaining = targets - covered
        lam_req = min(1 - epsilon, 1 - (1 - Fraction(epsilon, m)) ** (L - step + 1))
        ledger.append((step, Fraction(len(covered), total), lam_req))
    return FibreQuasitiling(u, out, len(covered), total, ledger)


def _replay(window: Window, u: int, rel: list[tuple[int, tuple[int, ...]]],
            A: CompactSet, balls, epsilon, tiles) -> FibreQuasitiling:
    pu = window.punc_scaled[u]
    translates = []
    covered: set[int] = set()
    for lv, dv in rel:
        key = tuple(a + b for a, b in zip(dv, pu))
        c = window.index[key]
        translates.append((lv, c))
        covered |= balls[lv - 1].fibre_targets(window, c, check_margin=False)
    total = len(A.fibre_targets(window, u, check_margin=False))
    return FibreQuasitiling(u, translates, len(covered), total, [])


def verify_quasitiling(window: Window, q: Quasitiling, A: CompactSet,
                       units: list[int] | None = None) -> dict:
    """Exact per-fibre check: containment, eps-disjoint with explicit hats
    (construction order), and (1 - eps)-cover.  Never raises on a bad
    quasitiling; the report carries the verdict and worst-fibre statistics."""
    epsilon = q.epsilon
    balls = q.tiles.tiles()
    if units is None:
        units = sorted(q.per_unit)
    worst_cover = None
    worst_hat = None
    all_ok = True
    for u in units:
        fq = q.per_unit[u]
        targets = A.fibre_targets(window, u, check_margin=False)
        covered: set[int] = set()
        contained = True
        hats_ok = True
        for lv, c in fq.translates:
            fib = balls[lv - 1].fibre_targets(window, c, check_margin=False)
            if not fib <= targets:
                contained = False
            hat = fib - covered
            if len(hat) < (1 - epsilon) * len(fib):
                hats_ok = False
            covered |= fib
        frac_cov = Fraction(len(covered & targets), len(targets)) if targets else Fraction(1)
        ok = contained and hats_ok and frac_cov >= 1 - epsilon
        all_ok = all_ok and ok
        if worst_cover is None or frac_cov < worst_cover[1]:
            worst_cover = (u, frac_cov)
        if not hats_ok and worst_hat is None:
            worst_hat = u
    return {
        "pass": all_ok,
        "units_checked": len(units),
        "epsilon": str(epsilon),
        "worst_cover_unit": worst_cover[0] if worst_cover else None,
        "worst_cover_fraction": str(worst_cover[1]) if worst_cover else None,
        "hat_violation_unit": worst_hat,
    }
