"""Locating and counting resonances by the argument principle.

A rectangular box between two consecutive thresholds is searched on a
"chart": the analytic continuation that carries the branch pattern
``lam`` on the lower half plane and its real-axis-crossed image on the
upper half plane.  This makes the evaluated determinant a single analytic
function across the interval, so trapped modes (real zeros) sit in the
interior of straddling boxes and winding numbers are meaningful.

Zeros are isolated by adaptive quadtree subdivision on the winding
number, refined by Newton iteration with a central-difference derivative,
and re-verified by the winding of a final shrunken box, which also
supplies the reported multiplicity.  Threshold neighbourhoods, where the
argument principle fails in k, use the local coordinate k = L**2 - z**2.
"""

from __future__ import annotations

import cmath
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .geometry import Geometry
from .scattering import det_normalized_log
from .sheet import BoundaryCondition, SheetPoint, cross_real_axis, in_region

DELTA_EXCL = 0.05  # exclusion radius around thresholds for boxes in k


class WindingError(ArithmeticError):
    pass


class BoundaryZeroError(WindingError):
    """|f| on the contour too small to trust the phase tracking."""


class GatingError(ValueError):
    """Requested box leaves the searched region of the surface."""


@dataclass(frozen=True)
class Box:
    re0: float
    re1: float
    im0: float
    im1: float

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re0 + self.re1), 0.5 * (self.im0 + self.im1))

    @property
    def side(self) -> float:
        return max(self.re1 - self.re0, self.im1 - self.im0)

    def corners(self) -> list[complex]:
        return [
            complex(self.re0, self.im0),
            complex(self.re1, self.im0),
            complex(self.re1, self.im1),
            complex(self.re0, self.im1),
        ]

    def contains(self, z: complex, pad: float = 0.0) -> bool:
        return (
            self.re0 - pad <= z.real <= self.re1 + pad
            and self.im0 - pad <= z.imag <= self.im1 + pad
        )

    def split(self, fx: float = 0.5, fy: float = 0.5) -> list["Box"]:
        rm = self.re0 + fx * (self.re1 - self.re0)
        im = self.im0 + fy * (self.im1 - self.im0)
        return [
            Box(self.re0, rm, self.im0, im),
            Box(rm, self.re1, self.im0, im),
            Box(self.re0, rm, im, self.im1),
            Box(rm, self.re1, im, self.im1),
        ]


@dataclass(frozen=True)
class Resonance:
    point: SheetPoint
    multiplicity: int
    residual: float
    newton_steps: int
    n_lead: int

    def sort_key(self):
        return (self.point.k.real, self.point.k.imag, tuple(sorted(self.point.lam)))


@dataclass
class SearchResult:
    """Refined zeros plus any boxes the subdivision could not resolve."""

    resonances: list[Resonance] = field(default_factory=list)
    unresolved: list[Box] = field(default_factory=list)

    def __iter__(self):
        return iter(self.resonances)

    def __len__(self):
        return len(self.resonances)

    def __getitem__(self, i):
        return self.resonances[i]


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("GUIDEWAVE_THREADS", "1")))
    except ValueError:
        return 1


def winding_number(f, box: Box, quad_points: int = 64) -> int:
    """Number of zeros of f enclosed by the box boundary.

    Integrates f'/f as the total increment of arg f along the contour,
    bisecting every boundary segment until its phase step is below pi/2.
    The summed increments around a closed loop are an exact multiple of
    2*pi; any residual deviation above 0.1 raises WindingError.
    """
    pts: list[complex] = []
    corners = box.corners()
    per_side = max(4, quad_points // 4)
    for a, b in zip(corners, corners[1:] + corners[:1]):
        for t in range(per_side):
            pts.append(a + (b - a) * (t / per_side))
    vals = [f(z) for z in pts]
    scale = max(abs(v) for v in vals)
    if scale == 0.0:
        raise BoundaryZeroError("f vanishes on the contour")

    total = 0.0
    min_gap = 1e-9 * box.side
    for i in range(len(pts)):
        total += _phase_step(
            f, pts[i], pts[(i + 1) % len(pts)], vals[i], vals[(i + 1) % len(pts)],
            min_gap,
        )
    w = total / (2.0 * math.pi)
    if abs(w - round(w)) > 0.1:
        raise WindingError(f"non-integer winding {w:.3f}")
    return int(round(w))


def _phase_step(f, za, zb, fa, fb, min_gap, depth: int = 0) -> float:
    if abs(fa) == 0.0 or abs(fb) == 0.0:
        raise BoundaryZeroError("exact zero on the contour")
    d = cmath.phase(fb / fa)
    if abs(d) < 0.5 * math.pi:
        return d
    if abs(zb - za) < min_gap or depth > 48:
        raise BoundaryZeroError(
            f"phase not resolving near contour point {za:.6g}"
        )
    zm = 0.5 * (za + zb)
    fm = f(zm)
    return _phase_step(f, za, zm, fa, fm, min_gap, depth + 1) + _phase_step(
        f, zm, zb, fm, fb, min_gap, depth + 1
    )


@dataclass(frozen=True)
class _Zero:
    z: complex
    multiplicity: int
    residual: float
    newton_steps: int


def _newton(f, z0: complex, tol: float, scale: float, max_iter: int = 60):
    """Newton iteration with central-difference derivative."""
    z = z0
    fz = f(z)
    h = 1e-6 * max(1.0, abs(z0))
    for it in range(1, max_iter + 1):
        if abs(fz) < tol:
            return z, abs(fz), it
        df = (f(z + h) - f(z - h)) / (2.0 * h)
        if df == 0:
            break
        step = fz / df
        if abs(step) > scale:  # diverging; give up, caller shrinks the box
            break
        z = z - step
        fz = f(z)
        if abs(step) < 1e-15 * max(1.0, abs(z)):
            return z, abs(fz), it
    return None


def hunt_zeros(
    f,
    box: Box,
    tol: float,
    *,
    side_min: float = 1e-4,
    max_depth: int = 48,
    dedup: float = 1e-7,
    quad_points: int = 32,
) -> tuple[list[_Zero], list[Box]]:
    """Quadtree zero search for an analytic callable on a box.

    Subdivides while the winding exceeds 1 and the box side is above
    ``side_min``, then polishes by Newton from the cell centre, verifying
    each candidate with the winding of a shrunken box.  Returns the
    deduplicated zeros and any unresolved cells.
    """
    zeros: list[_Zero] = []
    unresolved: list[Box] = []
    workers = _n_workers()
    jitters = [(0.5, 0.5), (0.537, 0.463), (0.421, 0.589), (0.5, 0.391)]

    def recurse(b: Box, depth: int, w_known: int | None):
        try:
            w = winding_number(f, b, quad_points) if w_known is None else w_known
        except WindingError:
            unresolved.append(b)
            return
        if w == 0:
            return
        if depth > max_depth:
            unresolved.append(b)
            return
        if w == 1 or b.side <= side_min:
            got = _newton(f, b.center, tol, 4.0 * b.side + 1e-2)
            pad = 1e-9 * (1.0 + abs(b.center))
            if got is not None and b.contains(got[0], pad=pad):
                z, res, steps = got
                mult = _verify_multiplicity(f, z, dedup)
                if mult == w:  # everything in this cell is accounted for
                    zeros.append(_Zero(z, mult, res, steps))
                    return
            if b.side < 1e-8 * (1.0 + abs(b.center)):
                if got is not None and b.contains(got[0], pad=pad):
                    # inseparable cluster: report the refined point, flag the rest
                    z, res, steps = got
                    zeros.append(_Zero(z, _verify_multiplicity(f, z, dedup), res, steps))
                else:
                    unresolved.append(b)
                return
        _descend(b, depth)

    def _descend(b: Box, depth: int):
        for fx, fy in jitters:
            quads = b.split(fx, fy)
            try:
                if workers > 1 and depth == 0:
                    with ThreadPoolExecutor(max_workers=workers) as ex:
                        ws = list(
                            ex.map(lambda q: winding_number(f, q, quad_points), quads)
                        )
                else:
                    ws = [winding_number(f, q, quad_points) for q in quads]
            except WindingError:
                continue  # a zero sits on the cut line; shift it
            for q, w in zip(quads, ws):
                recurse(q, depth + 1, w)
            return
        unresolved.append(b)

    recurse(box, 0, None)

    zeros.sort(key=lambda t: (t.z.real, t.z.imag))
    merged: list[_Zero] = []
    for t in zeros:
        if merged and abs(t.z - merged[-1].z) < dedup:
            keep = min(merged[-1], t, key=lambda u: u.residual)
            merged[-1] = keep
        else:
            merged.append(t)
    return merged, unresolved


def _verify_multiplicity(f, z: complex, dedup: float) -> int:
    r = max(50.0 * dedup, 1e-6 * max(1.0, abs(z)))
    for _ in range(3):
        try:
            return winding_number(
                f, Box(z.real - r, z.real + r, z.imag - r, z.imag + r), 16
            )
        except WindingError:
            r *= 3.7
    return 1  # polish succeeded; treat as a simple zero


# --- charts: analytic continuation across one threshold interval ---------

class Chart:
    """Determinant continued across one interval between thresholds.

    ``lam`` is the branch pattern on the lower half plane; crossing the
    interval toggles every open cut, giving the upper-half pattern.  The
    evaluator is then analytic on boxes inside the column, real axis
    included.  Values are rescaled by a constant reference magnitude
    (fixed at the first anchor point) so that strongly evanescent systems
    stay inside the floating range; a constant factor changes neither
    zeros nor windings.
    """

    def __init__(self, g: Geometry, lam: frozenset, column_x: float, n_lead: int):
        self.g = g
        self.lam_below = frozenset(lam)
        probe = SheetPoint(complex(column_x, -1.0), self.lam_below, g.bc)
        self.lam_above = cross_real_axis(probe, column_x).lam
        self.n_lead = n_lead
        self._ref = None

    def log_value(self, k: complex) -> complex:
        lam = self.lam_below if k.imag < 0 else self.lam_above
        return det_normalized_log(self.g, SheetPoint(k, lam, self.g.bc), self.n_lead)

    def anchor(self, k: complex) -> None:
        self._ref = self.log_value(k).real

    def __call__(self, k: complex) -> complex:
        ld = self.log_value(k)
        if self._ref is None:
            self._ref = ld.real
        return cmath.exp(complex(min(ld.real - self._ref, 700.0), ld.imag))

    def pattern_at(self, k: complex) -> frozenset:
        axis_tol = 1e-8 * max(1.0, abs(k))
        if k.imag < -axis_tol:
            return self.lam_below
        if k.imag > axis_tol:
            return self.lam_above
        return self.lam_below


def _column_of(bc: BoundaryCondition, x: float) -> tuple[float, float]:
    """Threshold interval containing x (lower bound -inf below the first)."""
    first = bc.first_mode
    if x < first * first:
        return (-math.inf, float(first * first))
    n = max(first, int(math.floor(math.sqrt(x))))
    while (n + 1) ** 2 <= x:
        n += 1
    return (float(n * n), float((n + 1) ** 2))


def _gate_box(g: Geometry, chart: Chart, box: Box, delta_excl: float) -> None:
    lo, hi = _column_of(g.bc, 0.5 * (box.re0 + box.re1))
    if not (lo + delta_excl - 1e-12 <= box.re0 and box.re1 <= hi - delta_excl + 1e-12):
        if not (lo == -math.inf and box.re1 <= hi - delta_excl + 1e-12):
            raise GatingError(
                f"box [{box.re0}, {box.re1}] must stay one exclusion radius "
                f"inside a single threshold interval ({lo}, {hi})"
            )
    for z in box.corners():
        lam = chart.pattern_at(z if z.imag != 0 else z - 1e-6j)
        p = SheetPoint(z, lam, g.bc)
        if not in_region(p, delta_excl * (1.0 - 1e-9)):
            raise GatingError(f"box corner {z:.4g} is outside the search region")


def find_in_box(
    g: Geometry,
    lam,
    box: Box,
    n_lead: int,
    tol: float = 1e-9,
    *,
    delta_excl: float = DELTA_EXCL,
    quad_points: int = 32,
) -> SearchResult:
    """All determinant zeros in a box on the chart carrying ``lam`` below
    the real axis.

    The box must stay within one threshold interval and clear of every
    threshold by ``delta_excl``; threshold neighbourhoods belong to
    ``threshold_search``.
    """
    lam = frozenset(lam)
    chart = Chart(g, lam, 0.5 * (box.re0 + box.re1), n_lead)
    _gate_box(g, chart, box, delta_excl)
    chart.anchor(box.center)
    zeros, unresolved = hunt_zeros(f=chart, box=box, tol=tol, quad_points=quad_points)
    out = SearchResult(unresolved=unresolved)
    for t in zeros:
        pt = SheetPoint(t.z, chart.pattern_at(t.z), g.bc)
        out.resonances.append(
            Resonance(pt, t.multiplicity, t.residual, t.newton_steps, n_lead)
        )
    out.resonances.sort(key=Resonance.sort_key)
    return out


# --- threshold-local coordinates ----------------------------------------

class ThresholdMap:
    """Evaluator of the determinant in the local coordinate k = L**2 - z**2.

    The branch root of mode L equals z itself on the whole disk, so the
    evaluated function is analytic across the threshold; the remaining
    modes follow the real-axis crossing rules of the surface.
    """

    def __init__(self, g: Geometry, L: int, n_lead: int):
        self.g = g
        self.L = L
        self.n_lead = n_lead
        first = g.bc.first_mode
        self.base = frozenset(range(first, L))  # continued-from-above pattern
        self._ref = None

    def lam_at(self, z: complex) -> frozenset:
        im_k = -2.0 * z.real * z.imag
        lam = self.base if im_k < 0 else frozenset()
        if z.real < 0:
            lam = lam | {self.L}
        return lam

    def __call__(self, z: complex) -> complex:
        if z == 0:
            z = 1e-300 + 0j
        k = self.L * self.L - z * z
        ld = det_normalized_log(
            self.g, SheetPoint(k, self.lam_at(z), self.g.bc), self.n_lead
        )
        if self._ref is None:
            self._ref = ld.real
        return cmath.exp(complex(min(ld.real - self._ref, 700.0), ld.imag))


def threshold_search(
    g: Geometry,
    L: int,
    radius: float,
    n_lead: int,
    tol: float = 1e-9,
) -> SearchResult:
    """Resonances in a surface neighbourhood of the threshold L**2.

    Searches the z-disk |z| < radius minus a small central square, whose
    zero-minus-pole balance is tested separately: a positive central
    winding is an eigenvalue pinned at the threshold (|z| < tol).  A zero
    found at both z0 and -z0 projects to the same energy on opposite
    branches and is reported once, on the branch with L physical.
    """
    if not (0 < radius < 1):
        raise ValueError("threshold radius must lie in (0, 1)")
    fz = ThresholdMap(g, L, n_lead)
    dx, dy = 0.0123456789 * radius, 0.0098765432 * radius  # dodge the axes
    rho = 0.04 * radius
    r = radius / math.sqrt(2.0)
    boxes = [
        Box(-r + dx, -rho + dx, -r + dy, r + dy),
        Box(rho + dx, r + dx, -r + dy, r + dy),
        Box(-rho + dx, rho + dx, rho + dy, r + dy),
        Box(-rho + dx, rho + dx, -r + dy, rho + dy),
    ]
    zeros: list[_Zero] = []
    unresolved: list[Box] = []
    for b in boxes:
        zs, un = hunt_zeros(fz, b, tol)
        zeros.extend(zs)
        unresolved.extend(un)

    out = SearchResult(unresolved=unresolved)
    center = Box(-rho + dx, rho + dx, -rho + dy, rho + dy)
    try:
        w0 = winding_number(fz, center, 16)
    except WindingError:
        w0 = 0
        unresolved.append(center)
    if w0 > 0:
        pt = SheetPoint(complex(L * L, 0.0), frozenset(), g.bc)
        out.resonances.append(Resonance(pt, w0, math.nan, 0, n_lead))

    used = [False] * len(zeros)
    for i, t in enumerate(zeros):
        if used[i]:
            continue
        rep = t
        for j in range(i + 1, len(zeros)):
            if not used[j] and abs(zeros[j].z + t.z) < 1e-7:
                used[j] = True  # mirror image: same energy, opposite branch
                if zeros[j].z.real > rep.z.real:
                    rep = zeros[j]
        used[i] = True
        k = L * L - rep.z * rep.z
        pt = SheetPoint(k, fz.lam_at(rep.z), g.bc)
        out.resonances.append(
            Resonance(pt, rep.multiplicity, rep.residual, rep.newton_steps, n_lead)
        )
    out.resonances.sort(key=Resonance.sort_key)
    return out


# --- counting and family tracking ----------------------------------------

@dataclass(frozen=True)
class CountReport:
    r: float
    count: int
    region: str
    per_sheet: dict
    threshold_count: int
    unresolved: int


def _column_charts(bc: BoundaryCondition, n: int) -> list[frozenset]:
    """Branch patterns searched below the axis in the column (n^2, (n+1)^2)."""
    first = bc.first_mode
    pats = [frozenset(range(first, n + 1))]  # full prefix through n
    if frozenset({n}) not in pats:
        pats.append(frozenset({n}))
    return [p for p in pats if p]


def _boxes_for_column(
    lo: float, hi: float, height: float, delta: float
) -> Box:
    return Box(lo + delta, hi - delta, -height, 0.02)


def count_resonances(g: Geometry, r: float, n_lead: int, tol: float = 1e-9) -> CountReport:
    """Resonance count, with multiplicity, over the near-physical region.

    Covers { |Im k| < 1 + sqrt|k|/2, |k| < r } with column boxes on the
    continued-from-above charts plus a threshold-disk search at every
    threshold below r; zeros are deduplicated across charts on the real
    axis.  Counts are a lower census of the region, never a silent guess:
    unresolved cells are reported separately.
    """
    bc = g.bc
    first = bc.first_mode
    if r <= first * first:
        raise ValueError("r must exceed the lowest threshold")
    delta = DELTA_EXCL
    found: list[Resonance] = []
    unresolved = 0

    # bound states below the first threshold (physical branch, real axis)
    lo0 = -r + delta
    hi0 = first * first - delta
    if hi0 - lo0 > 4 * delta:
        res = find_in_box(g, frozenset(), Box(lo0, hi0, -0.25, 0.25), n_lead, tol)
        found.extend(res)
        unresolved += len(res.unresolved)

    n = first
    while n * n < r:
        lo, hi = float(n * n), float(min((n + 1) ** 2, r))
        if hi - lo > 4 * delta:
            height = 1.0 + 0.5 * math.sqrt(hi)
            height = min(height, 0.9 * (1.0 + math.sqrt(max(lo, 0.1))))
            box = _boxes_for_column(lo, hi, height, delta)
            for lam in _column_charts(bc, n):
                try:
                    res = find_in_box(g, lam, box, n_lead, tol)
                except GatingError:
                    continue
                found.extend(res)
                unresolved += len(res.unresolved)
        ts = threshold_search(g, n, 0.3, n_lead, tol)
        found.extend(ts)
        unresolved += len(ts.unresolved)
        n += 1

    kept: list[Resonance] = []
    seen = set()
    for res in sorted(found, key=Resonance.sort_key):
        k = res.point.k
        if k.imag > 1e-6 * max(1.0, abs(k)):
            continue  # mirror of a continuation from below; counted once
        if abs(k) >= r or abs(k.imag) >= 1.0 + 0.5 * math.sqrt(abs(k)):
            continue
        if abs(k.imag) < 1e-6:
            key = ("axis", round(k.real, 6))
        else:
            key = (tuple(sorted(res.point.lam)), round(k.real, 6), round(k.imag, 6))
        if key in seen:
            continue
        seen.add(key)
        kept.append(res)

    per_sheet: dict[str, int] = {}
    for res in kept:
        name = "{" + ",".join(str(i) for i in sorted(res.point.lam)) + "}"
        per_sheet[name] = per_sheet.get(name, 0) + res.multiplicity
    thr = sum(res.multiplicity for res in kept if math.isnan(res.residual))
    return CountReport(
        r=r,
        count=sum(res.multiplicity for res in kept),
        region="|Im k| < 1 + sqrt(|k|)/2, |k| < r",
        per_sheet=per_sheet,
        threshold_count=thr,
        unresolved=unresolved,
    )


@dataclass(frozen=True)
class TrackHit:
    seed: float
    resonance: Resonance | None
    distance: float

    @property
    def miss(self) -> bool:
        return self.resonance is None


def track_family(
    g: Geometry, seeds, n_lead: int, tol: float = 1e-9
) -> list[TrackHit]:
    """Nearest resonance to each energy seed, searched in a local box.

    Each seed gets a box of half-width max(0.5, 1/seed) on every chart of
    its threshold interval; the closest zero by |seed - k| is reported,
    or a miss when the boxes are empty.
    """
    out = []
    for lam_seed in seeds:
        w = max(0.5, 1.0 / lam_seed)
        lo, hi = _column_of(g.bc, lam_seed)
        re0 = max(lam_seed - w, (lo if lo > -math.inf else lam_seed - w) + DELTA_EXCL)
        re1 = min(lam_seed + w, hi - DELTA_EXCL)
        best: Resonance | None = None
        best_d = math.inf
        if re1 > re0:
            box = Box(re0, re1, -w, 0.02)
            n_col = int(round(math.sqrt(lo))) if lo > 0 else g.bc.first_mode
            for lam in _column_charts(g.bc, n_col):
                try:
                    res = find_in_box(g, lam, box, n_lead, tol)
                except GatingError:
                    continue
                for rr in res:
                    if rr.point.k.imag > 1e-6 * max(1.0, abs(rr.point.k)):
                        continue  # from-below mirror; its partner is tracked
                    d = abs(rr.point.k - lam_seed)
                    if d < best_d:
                        best, best_d = rr, d
        out.append(TrackHit(lam_seed, best, best_d))
    return out
