"""Branch bookkeeping for the multi-sheeted continuation surface.

Every channel n of the strip contributes a square root sqrt(n**2 - k) with
branch line [n**2, inf).  A point of the surface is the pair (k, lambda):
the projection k together with the finite set ``lambda`` of mode indices
whose root is evaluated on the non-physical branch.  All operations here
are pure; SheetPoint is immutable and hashable.

Sign convention
---------------
``branch_sqrt(n, p)`` returns the principal square root of n**2 - k when
n is not in ``p.lam`` (so Re s >= 0) and its negative when n is in
``p.lam`` (Re s <= 0).  On the cut itself (k real, k > n**2) the value is
the limit from Im k > 0, i.e. -1j*sqrt(k - n**2) on the physical branch.
This boundary convention is used consistently everywhere in the package.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field


class BranchPointError(ValueError):
    """Raised when a square root is requested exactly at its branch point."""


class BoundaryCondition(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"

    @property
    def first_mode(self) -> int:
        """Lowest transverse mode index: 1 for Dirichlet, 0 for Neumann."""
        return 1 if self is BoundaryCondition.DIRICHLET else 0


@dataclass(frozen=True)
class Threshold:
    """Channel opening n**2 for transverse mode n; a branch point."""

    n: int
    value: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.n * self.n))


@dataclass(frozen=True)
class SheetPoint:
    """A point of the continuation surface: projection plus branch data.

    ``lam`` holds the mode indices on the non-physical branch.  The point
    is physical iff ``lam`` is empty.
    """

    k: complex
    lam: frozenset[int] = frozenset()
    bc: BoundaryCondition = BoundaryCondition.DIRICHLET

    def __post_init__(self):
        object.__setattr__(self, "k", complex(self.k))
        lam = frozenset(int(n) for n in self.lam)
        first = self.bc.first_mode
        for n in lam:
            if n < first:
                raise ValueError(f"mode {n} invalid for {self.bc.value} (first is {first})")
        object.__setattr__(self, "lam", lam)

    @property
    def physical(self) -> bool:
        return not self.lam

    @property
    def n_k(self) -> int | None:
        """Largest mode index on the non-physical branch, None if physical."""
        return max(self.lam) if self.lam else None

    def to_json(self) -> dict:
        return {
            "re": self.k.real,
            "im": self.k.imag,
            "lambda": sorted(self.lam),
            "bc": self.bc.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SheetPoint":
        return cls(
            complex(obj["re"], obj["im"]),
            frozenset(obj["lambda"]),
            BoundaryCondition(obj["bc"]),
        )


def thresholds(bc: BoundaryCondition, kmax: float) -> list[Threshold]:
    """All thresholds n**2 <= kmax for the given boundary condition, ascending."""
    if kmax < 0:
        raise ValueError("kmax must be nonnegative")
    out = []
    n = bc.first_mode
    while n * n <= kmax:
        out.append(Threshold(n))
        n += 1
    return out


def branch_sqrt(n: int, p: SheetPoint) -> complex:
    """Square root s of n**2 - p.k on the branch selected by p.lam.

    Re s >= 0 for n not in p.lam, Re s <= 0 otherwise.  On the cut (real
    k > n**2) the limit from Im k > 0 is used.  Raises BranchPointError at
    k == n**2 exactly; threshold neighbourhoods must use the local
    coordinate k = n**2 - z**2 instead.
    """
    if n < p.bc.first_mode:
        raise ValueError(f"mode {n} invalid for {p.bc.value}")
    w = n * n - p.k
    if w == 0:
        raise BranchPointError(f"k == {n}**2 is a branch point")
    if p.k.imag == 0.0 and w.real < 0.0:
        # on the cut: approach from Im k > 0
        s = -1j * math.sqrt(-w.real)
    else:
        s = cmath.sqrt(w)
    return -s if n in p.lam else s


def branch_sqrt_array(p: SheetPoint, n_max: int):
    """branch_sqrt for every mode of p.bc up to n_max, as a numpy array.

    Same conventions as branch_sqrt; the entry order follows the mode
    indices of the boundary condition (first_mode .. n_max).
    """
    import numpy as np

    ns = np.arange(p.bc.first_mode, n_max + 1)
    w = ns.astype(float) ** 2 - p.k
    if np.any(w == 0):
        raise BranchPointError("k sits on a threshold")
    s = np.sqrt(w.astype(complex))
    if p.k.imag == 0.0:
        cut = w.real < 0.0
        s[cut] = -1j * np.sqrt(-w.real[cut])
    if p.lam:
        flip = np.isin(ns, sorted(p.lam))
        s[flip] = -s[flip]
    return ns, s


def cross_real_axis(p: SheetPoint, x: float) -> SheetPoint:
    """Sheet reached by crossing the real axis at x.

    Toggles membership for every mode whose cut [n**2, inf) contains x.
    x may not sit on a threshold.
    """
    first = p.bc.first_mode
    if x >= first * first and math.isqrt(int(x)) ** 2 == x:
        raise ValueError(f"x = {x} is a threshold")
    toggled = set(p.lam)
    n = first
    while n * n < x:
        toggled ^= {n}
        n += 1
    return SheetPoint(p.k, frozenset(toggled), p.bc)


def encircle_threshold(p: SheetPoint, n: int) -> SheetPoint:
    """Sheet reached by a small loop around the branch point n**2 only."""
    if n < p.bc.first_mode:
        raise ValueError(f"mode {n} invalid for {p.bc.value}")
    return SheetPoint(p.k, p.lam ^ {n}, p.bc)


def _is_prefix(lam: frozenset[int], bc: BoundaryCondition) -> bool:
    first = bc.first_mode
    return lam == frozenset(range(first, max(lam) + 1))


def dist_to_physical(p: SheetPoint) -> float:
    """Approximate surface distance from p to the physical branch.

    Piecewise rule used for search gating only: 0 on the physical branch;
    |Im k| on full-prefix sheets (the crossing is a straight vertical
    path); |Im k| + 2*|Re k - n_k**2| on single-toggle sheets, whose
    shortest path must round the branch point n_k**2.  Other branch
    patterns return +inf (outside the searched region).
    """
    if not p.lam:
        return 0.0
    if _is_prefix(p.lam, p.bc):
        return abs(p.k.imag)
    if len(p.lam) == 1:
        (n,) = p.lam
        return abs(p.k.imag) + 2.0 * abs(p.k.real - n * n)
    return math.inf


def in_region(p: SheetPoint, alpha: float) -> bool:
    """Search-region gate: close to the physical plane, away from thresholds.

    True iff the approximate distance to the physical plane is below
    1 + sqrt|k| and every threshold n**2 is farther than alpha from the
    projection of p.  Branch patterns other than the empty set, a full
    prefix, or a single toggle are never in the region.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if dist_to_physical(p) >= 1.0 + math.sqrt(abs(p.k)):
        return False
    n = p.bc.first_mode
    while True:
        t = n * n
        if abs(p.k - t) <= alpha:
            return False
        if t > abs(p.k) + alpha:
            break
        n += 1
    return True
