"""Piecewise-rectangular waveguide geometries.

A geometry is an ordered chain of segments: a half-infinite lead of width
pi, a finite number of rectangular segments, and a second lead.  The
finite chain is centred at x = 0 so the perturbation sits inside a ball
around the origin.  Transverse modes on a segment of width w and lower
wall at ``offset`` are the orthonormal sin/cos families on that interval.

Junction overlap integrals are evaluated in closed form (trigonometric
product formulas); numerical quadrature appears only in tests as a
cross-check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .sheet import BoundaryCondition


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    """One rectangular piece: length (inf for leads), width, lower wall y."""

    length: float
    width: float
    offset: float = 0.0

    @property
    def is_lead(self) -> bool:
        return math.isinf(self.length)

    @property
    def y_interval(self) -> tuple[float, float]:
        return (self.offset, self.offset + self.width)


def lead() -> Segment:
    return Segment(math.inf, math.pi, 0.0)


@dataclass(frozen=True)
class Geometry:
    segments: tuple[Segment, ...]
    bc: BoundaryCondition = BoundaryCondition.DIRICHLET
    M: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.M == 0.0:
            object.__setattr__(self, "M", self._minimal_radius())

    def _minimal_radius(self) -> float:
        r = 0.0
        for (x0, x1), seg in zip(self.x_spans(), self.segments):
            if seg.is_lead or (seg.width == math.pi and seg.offset == 0.0):
                continue
            xm = max(abs(x0), abs(x1))
            ym = max(math.pi, abs(seg.offset), abs(seg.offset + seg.width))
            r = max(r, math.hypot(xm, ym))
        return math.ceil(r * 100) / 100 if r > 0 else 1.0

    @property
    def interior(self) -> tuple[Segment, ...]:
        return self.segments[1:-1]

    def total_length(self) -> float:
        return sum(s.length for s in self.interior)

    def x_spans(self) -> list[tuple[float, float]]:
        """Longitudinal extent of every segment, leads reaching to +-inf."""
        left = -0.5 * self.total_length()
        spans = [(-math.inf, left)]
        for seg in self.interior:
            spans.append((left, left + seg.length))
            left += seg.length
        spans.append((spans[-1][1], math.inf))
        return spans

    def junctions(self) -> list[float]:
        return [b for (_, b) in self.x_spans()[:-1]]

    def is_free_strip(self) -> bool:
        return all(
            s.width == math.pi and s.offset == 0.0 for s in self.interior
        )

    def to_json(self) -> dict:
        return {
            "bc": self.bc.value,
            "segments": [
                {
                    "length": "inf" if s.is_lead else s.length,
                    "width": s.width,
                    "offset": s.offset,
                }
                for s in self.segments
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Geometry":
        segs = tuple(
            Segment(
                math.inf if s["length"] == "inf" else float(s["length"]),
                float(s["width"]),
                float(s.get("offset", 0.0)),
            )
            for s in obj["segments"]
        )
        return cls(segs, BoundaryCondition(obj["bc"]), float(obj.get("M", 0.0)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path) -> "Geometry":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def aperture(a: Segment, b: Segment) -> tuple[float, float]:
    """Common transverse interval of two adjacent segments."""
    lo = max(a.offset, b.offset)
    hi = min(a.offset + a.width, b.offset + b.width)
    return (lo, hi)


def validate(g: Geometry) -> list[str]:
    """Check all geometry invariants; an empty list means the geometry is ok."""
    v = []
    segs = g.segments
    if len(segs) < 2:
        return ["geometry needs at least two segments (the two leads)"]
    for pos, idx in (("first", 0), ("last", len(segs) - 1)):
        s = segs[idx]
        if not s.is_lead:
            v.append(f"segment {idx}: {pos} segment must be a lead (infinite length)")
        if abs(s.width - math.pi) > 1e-12:
            v.append(f"segment {idx}: lead width must be pi")
        if s.offset != 0.0:
            v.append(f"segment {idx}: lead offset must be 0")
    for i, s in enumerate(segs[1:-1], start=1):
        if s.is_lead:
            v.append(f"segment {i}: interior segment must have finite length")
        elif s.length <= 0:
            v.append(f"segment {i}: length must be positive")
        if s.width <= 0:
            v.append(f"segment {i}: width must be positive")
    for i in range(len(segs) - 1):
        lo, hi = aperture(segs[i], segs[i + 1])
        if hi - lo <= 0:
            v.append(f"junction {i}: segments {i} and {i + 1} have empty aperture")
    if not any(v):
        for i, ((x0, x1), seg) in enumerate(zip(g.x_spans(), g.segments)):
            if seg.is_lead or (seg.width == math.pi and seg.offset == 0.0):
                continue
            xm = max(abs(x0), abs(x1))
            ym = max(math.pi, abs(seg.offset), abs(seg.offset + seg.width))
            if math.hypot(xm, ym) > g.M + 1e-9:
                v.append(
                    f"segment {i}: perturbation reaches radius "
                    f"{math.hypot(xm, ym):.3f} > M = {g.M}"
                )
    return v


# --- transverse modes and their closed-form product integrals ----------

def mode_count(width: float, n_lead: int) -> int:
    """Relative truncation rule: modes per segment scale with its width."""
    return max(1, math.ceil(n_lead * width / math.pi))


def mode_indices(bc: BoundaryCondition, count: int) -> range:
    first = bc.first_mode
    return range(first, first + count)


def transverse_wavenumber(bc: BoundaryCondition, seg_width: float, m: int) -> float:
    return m * math.pi / seg_width


def _trig_integral(kind: str, c: float, r: float, y0: float, y1: float) -> float:
    """Integral of cos(c y + r) or sin(c y + r) over [y0, y1]."""
    if abs(c) < 1e-10:
        return (y1 - y0) * (math.cos(r) if kind == "cos" else math.sin(r))
    if kind == "cos":
        return (math.sin(c * y1 + r) - math.sin(c * y0 + r)) / c
    return -(math.cos(c * y1 + r) - math.cos(c * y0 + r)) / c


def _mode_params(bc: BoundaryCondition, seg: Segment, m: int):
    """(kind, frequency, phase, normalisation) of mode m on a segment."""
    a = m * math.pi / seg.width
    phase = -a * seg.offset
    if bc is BoundaryCondition.DIRICHLET:
        return ("sin", a, phase, math.sqrt(2.0 / seg.width))
    if m == 0:
        return ("cos", 0.0, 0.0, math.sqrt(1.0 / seg.width))
    return ("cos", a, phase, math.sqrt(2.0 / seg.width))


def _product_integral(k1, a, p, k2, b, q, y0, y1) -> float:
    """Integral over [y0, y1] of trig(a y + p) * trig(b y + q)."""
    if k1 == "sin" and k2 == "sin":
        return 0.5 * (
            _trig_integral("cos", a - b, p - q, y0, y1)
            - _trig_integral("cos", a + b, p + q, y0, y1)
        )
    if k1 == "cos" and k2 == "cos":
        return 0.5 * (
            _trig_integral("cos", a - b, p - q, y0, y1)
            + _trig_integral("cos", a + b, p + q, y0, y1)
        )
    if k1 == "sin":  # sin * cos
        return 0.5 * (
            _trig_integral("sin", a + b, p + q, y0, y1)
            + _trig_integral("sin", a - b, p - q, y0, y1)
        )
    return _product_integral(k2, b, q, k1, a, p, y0, y1)


def overlap_matrix(
    left: Segment,
    right: Segment,
    n_left: int,
    n_right: int,
    bc: BoundaryCondition,
) -> np.ndarray:
    """Junction coupling C[m, n] = int_aperture phi^L_m phi^R_n dy.

    Modes are orthonormal on their own segment width; identical segments
    therefore give the identity.  Entries are exact trigonometric
    integrals over the common interval.
    """
    y0, y1 = aperture(left, right)
    if y1 - y0 <= 0:
        raise GeometryError("segments do not overlap")
    out = np.empty((n_left, n_right))
    for i, m in enumerate(mode_indices(bc, n_left)):
        k1, a, p, na = _mode_params(bc, left, m)
        for j, n in enumerate(mode_indices(bc, n_right)):
            k2, b, q, nb = _mode_params(bc, right, n)
            out[i, j] = na * nb * _product_integral(k1, a, p, k2, b, q, y0, y1)
    return out


# --- two-mirror staircase ----------------------------------------------

def arc_gap_profile(d: float, r1: float, r2: float):
    """Vertical gap between two opposing circular mirror arcs.

    The arcs face each other across a gap of 2*d at x = 0 and curve away
    from the bounce axis; the gap narrows off-axis.  Returns (gap(x),
    y_bottom(x)) with the gap centred on the strip axis y = pi/2.
    """
    c = math.pi / 2.0

    def gap(x: float) -> float:
        return (
            2.0 * d
            - (r1 - math.sqrt(r1 * r1 - x * x))
            - (r2 - math.sqrt(r2 * r2 - x * x))
        )

    def y_bottom(x: float) -> float:
        return c - d + (r2 - math.sqrt(r2 * r2 - x * x))

    return gap, y_bottom


def staircase_from_arcs(
    d: float,
    r1: float,
    r2: float,
    steps: int,
    bc: BoundaryCondition = BoundaryCondition.DIRICHLET,
    edge_fraction: float = 0.5,
    sample_quantile: float = 0.0,
) -> Geometry:
    """Staircase sampling of a two-mirror cavity embedded in the strip.

    Two circular arcs of radii r1, r2 face each other across the strip
    axis, 2*d apart at their vertices.  The arc region is truncated where
    the gap has shrunk to ``edge_fraction * 2d`` and sampled by ``steps``
    equal-length rectangular segments.  Each step samples the arcs at the
    fraction ``sample_quantile`` of its length from the edge nearest the
    vertex (0 = inner edge, 0.5 = midpoint), so with the default the
    widest segments attain the full gap 2*d exactly and the widths
    converge to the arc profile pointwise as steps grows; for steps=1 the
    result is a single cavity of width 2*d.
    """
    if d <= 0 or steps < 1:
        raise GeometryError("require d > 0 and steps >= 1")
    stability = (1.0 - 2.0 * d / r1) * (1.0 - 2.0 * d / r2)
    if not (r1 > 2.0 * d and r2 > 2.0 * d and 0.0 < stability < 1.0):
        raise GeometryError(
            f"mirror pair is outside the stable region: product {stability:.3g}"
        )
    gap, y_bottom = arc_gap_profile(d, r1, r2)
    target = edge_fraction * 2.0 * d
    xmax = min(r1, r2) * (1.0 - 1e-12)
    if gap(xmax) > target:
        half = xmax
    else:
        half = brentq(lambda x: gap(x) - target, 0.0, xmax)
    dx = 2.0 * half / steps
    segs = [lead()]
    for i in range(steps):
        x0, x1 = -half + i * dx, -half + (i + 1) * dx
        if x0 < 0 < x1:
            x = 0.0
        elif x1 <= 0:  # left half: inner edge is x1
            x = x1 - sample_quantile * dx
        else:
            x = x0 + sample_quantile * dx
        segs.append(Segment(dx, gap(x), y_bottom(x)))
    segs.append(lead())
    return Geometry(tuple(segs), bc)


# --- fixed fixtures ------------------------------------------------------

def free_strip(bc: BoundaryCondition = BoundaryCondition.DIRICHLET) -> Geometry:
    return Geometry((lead(), lead()), bc)


def test_cavity() -> Geometry:
    """Shared fixture: Dirichlet lead-cavity-lead, cavity 2*pi wide, pi long,
    centred on the strip axis."""
    cavity = Segment(math.pi, 2.0 * math.pi, -math.pi / 2.0)
    return Geometry((lead(), cavity, lead()), BoundaryCondition.DIRICHLET)


def weak_coupling_cavity(neck: float = 0.1) -> Geometry:
    """Square cavity reached through narrow necks; nearly closed box.

    The 2.5 x 2.5 Dirichlet box has eigenvalues (m^2+n^2)*(pi/2.5)^2; the
    necks of width ``neck`` couple it weakly to the leads, so resonances
    sit exponentially close to the closed-box spectrum.
    """
    side = 2.5
    necks = Segment(0.3, neck, 0.0)
    cavity = Segment(side, side, -1.2)
    return Geometry(
        (lead(), necks, cavity, necks, lead()), BoundaryCondition.DIRICHLET
    )
