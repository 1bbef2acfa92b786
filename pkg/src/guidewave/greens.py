"""Free-strip Green's function, evaluated on any branch of the surface.

The kernel of the strip resolvent is the transverse mode sum

    G_k = (1/(pi*sqrt(-k))) e^{-sqrt(-k)|x-x'|}                (Neumann n=0)
        + sum_n (1/sqrt(n**2-k)) e^{-sqrt(n**2-k)|x-x'|} f_n(y) f_n(y')

with f_n = cos(n y) for Neumann and sin(n y) for Dirichlet (n >= 1).
Continuation to non-physical branches flips the sign of the selected
square roots inside the same closed series; no separate formula is used.
Evaluation on the diagonal x == x', y == y' is rejected (logarithmic
singularity).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .sheet import BoundaryCondition, SheetPoint, branch_sqrt


@dataclass(frozen=True)
class GreensEval:
    """Partial mode sum with a rigorous bound for the omitted tail.

    tail_bound is +inf when no valid bound is available (diagonal in x, or
    n_max too small for the closed-form tail estimate).
    """

    value: complex
    tail_bound: float
    n_terms: int


def mode_term(p: SheetPoint, n: int, x: float, xp: float) -> complex:
    """Longitudinal factor of one mode: exp(-s_n |x-xp|) / (c_n s_n).

    c_n is pi for the Neumann n=0 mode and 1 otherwise; the transverse
    factors are applied by the caller.
    """
    s = branch_sqrt(n, p)
    c = math.pi if (n == 0 and p.bc is BoundaryCondition.NEUMANN) else 1.0
    return cmath.exp(-s * abs(x - xp)) / (c * s)


def _transverse(bc: BoundaryCondition, n: int, y: float) -> float:
    if bc is BoundaryCondition.DIRICHLET:
        return math.sin(n * y)
    return 1.0 if n == 0 else math.cos(n * y)


def tail_bound(p: SheetPoint, n_max: int, dx: float) -> float:
    """Upper bound for the mode sum truncated after n_max, at |x-xp| = dx.

    Uses |exp(-s_n dx)| <= exp(-Re s_n dx) and Re s_n >= sqrt(n**2 - |k|),
    valid once n**2 > 2|k| and every non-physical mode is below the cut.
    Returns +inf when those conditions fail or dx == 0.
    """
    ak = abs(p.k)
    if dx <= 0.0 or n_max * n_max <= 2.0 * ak:
        return math.inf
    if p.lam and max(p.lam) > n_max:
        return math.inf
    m = n_max + 1
    sigma = math.sqrt(m * m - ak)
    gamma = sigma / m  # sqrt(n^2-|k|) >= gamma*n for all n >= m
    q = math.exp(-gamma * dx)
    return math.exp(-m * gamma * dx) / (sigma * (1.0 - q))


def green_eval(
    p: SheetPoint, x: float, y: float, xp: float, yp: float, n_max: int
) -> GreensEval:
    """Partial sum of the strip Green's function through mode n_max.

    Requires (x, y) != (xp, yp).  When x == xp the series converges only
    conditionally and tail_bound is reported as +inf.
    """
    if x == xp and y == yp:
        raise ValueError("Green's function diagonal is not evaluated")
    dx = abs(x - xp)
    total = 0.0j
    count = 0
    for n in range(p.bc.first_mode, n_max + 1):
        total += mode_term(p, n, x, xp) * _transverse(p.bc, n, y) * _transverse(p.bc, n, yp)
        count += 1
    return GreensEval(total, tail_bound(p, n_max, dx), count)


def sheet_difference_rank(p: SheetPoint, xs, ys, tol: float = 1e-8) -> int:
    """Numerical rank of the kernel G(p) - G(physical) on a sample grid.

    The sign flip cancels every physical-branch term, leaving the finite
    sum over p.lam of (e^{+s dx} + e^{-s dx}) f_n(y) f_n(y') / (c_n s_n),
    which is separable with rank at most 2 per mode.  The difference is
    finite on the diagonal, so no points are excluded.
    """
    import numpy as np

    phys = SheetPoint(p.k, frozenset(), p.bc)
    pts = [(x, y) for x in xs for y in ys]
    m = np.zeros((len(pts), len(pts)), dtype=complex)
    for i, (x, y) in enumerate(pts):
        for j, (xp, yp) in enumerate(pts):
            acc = 0.0j
            for n in p.lam:
                tr = _transverse(p.bc, n, y) * _transverse(p.bc, n, yp)
                acc += (mode_term(p, n, x, xp) - mode_term(phys, n, x, xp)) * tr
            m[i, j] = acc
    sv = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(sv > tol * sv[0]))
