"""Two-mirror bouncing-ball frequencies and trapped-family diagnostics.

A pair of concave circular mirrors of radii r1, r2 facing each other
across a gap 2*d supports long-lived bouncing-ball states whenever the
stability product (1 - 2d/r1)(1 - 2d/r2) lies strictly inside (0, 1).
Their frequencies

    w_{p,q} = (pi p + (q + 1/2) arccos sqrt((1-2d/r1)(1-2d/r2))) / (2 d)

are used as energy seeds lambda = w**2 for the resonance tracker; the
O(1/p) remainder of the construction is dropped, the tracking boxes are
wide enough to absorb it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sheet import BoundaryCondition


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class QuasimodeSpec:
    """Mirror pair: half-gap d, radii r1 and r2, transverse index q."""

    d: float
    r1: float
    r2: float
    q: int = 0

    def stability(self) -> float:
        return (1.0 - 2.0 * self.d / self.r1) * (1.0 - 2.0 * self.d / self.r2)

    def check(self) -> None:
        if self.d <= 0 or self.q < 0:
            raise StabilityError("require d > 0 and q >= 0")
        s = self.stability()
        if not (0.0 < s < 1.0):
            raise StabilityError(
                f"stability product {s:.4g} outside (0, 1); mirrors do not trap"
            )


def quasimode_frequency(spec: QuasimodeSpec, p: int) -> float:
    """Frequency w of the (p, q) bouncing-ball state; the seed is w**2."""
    spec.check()
    if p < 1:
        raise ValueError("longitudinal index p must be >= 1")
    phase = math.acos(math.sqrt(spec.stability()))
    return (math.pi * p + (spec.q + 0.5) * phase) / (2.0 * spec.d)


def seeds(spec: QuasimodeSpec, p_values) -> list[float]:
    """Energy seeds lambda_p = w_{p,q}**2 for a range of p."""
    return [quasimode_frequency(spec, p) ** 2 for p in p_values]


def gap_condition(
    lambdas, alpha: float, bc: BoundaryCondition
) -> list[bool]:
    """Per-seed check that every threshold n**2 is farther than alpha."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    out = []
    for lam in lambdas:
        ok = True
        n = bc.first_mode
        while n * n <= lam + alpha:
            if abs(lam - n * n) <= alpha:
                ok = False
                break
            n += 1
        out.append(ok)
    return out


@dataclass(frozen=True)
class DecayFit:
    """Least-squares power-law fit of |lambda - k| against lambda."""

    slope: float
    intercept: float
    residual: float
    n_points: int
    insufficient: bool = False


def family_decay_fit(track_results) -> DecayFit:
    """Fit log|lambda_j - k_j| = slope * log(lambda_j) + b over family hits.

    ``track_results`` holds (lambda, distance) pairs for the hits of a
    tracked family (misses excluded by the caller).  A trapped family
    shows a strongly negative slope; fewer than 4 hits is reported as
    insufficient data rather than fitted.
    """
    pairs = [(lam, dist) for lam, dist in track_results if dist > 0]
    if len(pairs) < 4:
        return DecayFit(math.nan, math.nan, math.nan, len(pairs), insufficient=True)
    x = np.log([lam for lam, _ in pairs])
    y = np.log([dist for _, dist in pairs])
    (slope, intercept), res = np.polyfit(x, y, 1, full=True)[:2]
    residual = float(res[0]) if len(res) else 0.0
    return DecayFit(float(slope), float(intercept), residual, len(pairs))
