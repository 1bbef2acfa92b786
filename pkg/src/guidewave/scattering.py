"""Mode-matching linear system, S-matrix, and resonance determinant.

Fields are expanded in the orthonormal transverse modes of each segment.
Interior segments carry (value, x-derivative) coefficient pairs at their
left junction, propagated by per-mode 2x2 transfer matrices that are
entire functions of k.  Leads carry outgoing amplitudes a_n with the
x-dependence exp(-s_n |x|), s_n the branch square root of the current
sheet, which makes "resonance = nontrivial solution of the homogeneous
system" a single convention valid on every branch.

Junction conditions are projected so that the discrete flux form is
preserved exactly: with C the aperture overlap matrix between the wider
and the narrower segment, value continuity is imposed against the wider
basis and derivative continuity against the narrower one (Dirichlet;
roles swap for Neumann).  This yields S-matrix unitarity at finite
truncation up to roundoff.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Geometry,
    GeometryError,
    Segment,
    mode_count,
    mode_indices,
    overlap_matrix,
    validate,
)
from .sheet import BoundaryCondition, SheetPoint, branch_sqrt


@dataclass(frozen=True)
class ScatteringSystem:
    point: SheetPoint
    geometry: Geometry
    n_modes: tuple[int, ...]
    matrix: np.ndarray
    det_sign: complex
    log_abs_det: float

    @property
    def det(self) -> complex:
        return self.det_sign * math.exp(min(self.log_abs_det, 709.0))


@dataclass(frozen=True)
class SMatrix:
    """Flux-normalised scattering matrix over the open channels.

    Block layout: indices [0, n_open) are the left-lead channels, indices
    [n_open, 2 n_open) the right-lead channels, in increasing mode order.
    """

    point: SheetPoint
    blocks: np.ndarray
    n_open: int

    def unitarity_defect(self) -> float:
        s = self.blocks
        return float(np.linalg.norm(s @ s.conj().T - np.eye(len(s)), 2))


class ZeroChannelError(ValueError):
    """No propagating channel at the requested energy."""


def _cos_sinc(z: complex, length: float) -> tuple[complex, complex]:
    """cos(w L) and sin(w L)/w for w = sqrt(z); entire in z."""
    w = cmath.sqrt(z)
    wl = w * length
    if abs(wl) < 1e-4:
        wl2 = wl * wl
        return 1.0 - wl2 / 2.0 + wl2 * wl2 / 24.0, length * (1.0 - wl2 / 6.0)
    return cmath.cos(wl), cmath.sin(wl) / w


def segment_transfer(p: SheetPoint, width: float, length: float, n: int) -> np.ndarray:
    """Propagation of (value, derivative) through one segment mode.

    Entries cos(bL), sin(bL)/b, -b sin(bL), cos(bL) with b**2 = k -
    (n pi / width)**2, computed branch-free so the matrix is entire in k;
    its determinant is 1 for every k and length.
    """
    a = n * math.pi / width
    z = p.k - a * a
    c, s = _cos_sinc(z, length)
    return np.array([[c, s], [-z * s, c]])


def _lead_rates(g: Geometry, p: SheetPoint, n_lead: int) -> np.ndarray:
    return np.array([branch_sqrt(n, p) for n in mode_indices(g.bc, n_lead)])


def _junction_sides(
    segs: tuple[Segment, ...], j: int
) -> tuple[Segment, Segment]:
    return segs[j], segs[j + 1]


def _contains(outer: Segment, inner: Segment, tol: float = 1e-12) -> bool:
    return (
        outer.offset <= inner.offset + tol
        and outer.offset + outer.width >= inner.offset + inner.width - tol
    )


class _Assembly:
    """Index bookkeeping for the junction-matching linear system.

    Interior segments are represented per mode by the amplitudes of the
    two exponentials decaying away from each end, e^{-g(x-xL)} and
    e^{-g(xR-x)} with g the principal root of a**2 - k.  All matrix
    entries then stay of moderate size for any truncation.  The basis
    change away from the entire (value, derivative) pair multiplies the
    determinant by prod(2 g e^{-g L}); that factor is divided out again
    in closed form, so the reported determinant is the entire one.  Modes
    too close to their segment cutoff (degenerate pair) keep the entire
    cos/sinc representation, whose entries are of order one exactly there.
    """

    def __init__(self, g: Geometry, p: SheetPoint, n_lead: int):
        bad = validate(g)
        if bad:
            raise GeometryError("; ".join(bad))
        self.g = g
        self.p = p
        self.n_lead = n_lead
        segs = g.segments
        self.counts = tuple(
            n_lead if s.is_lead else mode_count(s.width, n_lead) for s in segs
        )
        # column offsets: left lead a, then (cp_i, cm_i) per interior, then b
        off = [0]
        off.append(self.counts[0])
        for c in self.counts[1:-1]:
            off.append(off[-1] + c)
            off.append(off[-1] + c)
        self.col_off = off
        self.size = off[-1] + self.counts[-1]
        self.lead_s = _lead_rates(g, p, n_lead)
        self.log_basis_factor = 0.0 + 0.0j
        self._segment_data = {}
        for i, seg in enumerate(segs):
            if seg.is_lead:
                continue
            alphas = np.array(
                [q * math.pi / seg.width for q in mode_indices(g.bc, self.counts[i])]
            )
            gam2 = alphas * alphas - p.k
            use_exp = np.abs(gam2) * seg.length**2 > 1e-4
            gam = np.sqrt(gam2.astype(complex))
            decay = np.exp(-gam * seg.length)
            self._segment_data[i] = (gam, decay, use_exp)
            for ge, de, ue in zip(gam, decay, use_exp):
                if ue:
                    self.log_basis_factor += np.log(2.0 * ge) - ge * seg.length

    def col_lead_left(self):
        return slice(0, self.counts[0])

    def col_lead_right(self):
        return slice(self.size - self.counts[-1], self.size)

    def col_cp(self, i: int):  # interior segment index (1-based in segs)
        base = self.col_off[2 * i - 1]
        return slice(base, base + self.counts[i])

    def col_cm(self, i: int):
        base = self.col_off[2 * i]
        return slice(base, base + self.counts[i])

    def segment_trace(self, i: int, end: str):
        """(value, derivative) coefficient vectors of the two unknown
        families of interior segment i at its left or right end."""
        seg = self.g.segments[i]
        gam, decay, use_exp = self._segment_data[i]
        n = self.counts[i]
        u_p = np.empty(n, complex)
        u_m = np.empty(n, complex)
        d_p = np.empty(n, complex)
        d_m = np.empty(n, complex)
        for q in range(n):
            ge, de = gam[q], decay[q]
            if use_exp[q]:
                if end == "left":
                    u_p[q], u_m[q] = 1.0, de
                    d_p[q], d_m[q] = -ge, ge * de
                else:
                    u_p[q], u_m[q] = de, 1.0
                    d_p[q], d_m[q] = -ge * de, ge
            else:
                # entire pair (value, derivative) at the left end
                c, s = _cos_sinc(-ge * ge, seg.length)
                if end == "left":
                    u_p[q], u_m[q] = 1.0, 0.0
                    d_p[q], d_m[q] = 0.0, 1.0
                else:
                    u_p[q], u_m[q] = c, s
                    d_p[q], d_m[q] = ge * ge * s, c
        return u_p, u_m, d_p, d_m


def _build_matrix(asm: _Assembly) -> np.ndarray:
    """Dense junction-matching matrix; rows grouped junction by junction."""
    g, p = asm.g, asm.p
    segs = g.segments
    last = len(segs) - 1
    m = np.zeros((asm.size, asm.size), dtype=complex)
    row = 0
    for j in range(last):
        sl, sr = _junction_sides(segs, j)
        nl, nr = asm.counts[j], asm.counts[j + 1]

        # trace maps: list of (column slice, value coefs, derivative coefs)
        def trace(side: int):
            if side == 0:
                s = asm.lead_s
                return [(asm.col_lead_left(), np.ones(nl), s)]
            if side == last:
                s = asm.lead_s
                return [(asm.col_lead_right(), np.ones(nr), -s)]
            end = "right" if side == j else "left"
            u_p, u_m, d_p, d_m = asm.segment_trace(side, end)
            return [
                (asm.col_cp(side), u_p, d_p),
                (asm.col_cm(side), u_m, d_m),
            ]

        tl, tr = trace(j), trace(j + 1)
        if _contains(sl, sr):
            big, small, tb, ts, nb, ns = sl, sr, tl, tr, nl, nr
        elif _contains(sr, sl):
            big, small, tb, ts, nb, ns = sr, sl, tr, tl, nr, nl
        else:
            raise GeometryError(
                f"junction {j}: apertures must be nested for mode matching"
            )
        c = overlap_matrix(big, small, nb, ns, g.bc)

        if g.bc is BoundaryCondition.DIRICHLET:
            # value against the wide basis, derivative against the narrow one
            wide_kind, narrow_kind = "val", "der"
        else:
            wide_kind, narrow_kind = "der", "val"

        def put(rows, cols, diag_coefs, mat=None):
            block = np.diag(diag_coefs) if mat is None else mat * diag_coefs
            m[rows, cols] += block

        for cols, val_c, der_c in tb:
            coefs = val_c if wide_kind == "val" else der_c
            put(slice(row, row + nb), cols, coefs)
        for cols, val_c, der_c in ts:
            coefs = val_c if wide_kind == "val" else der_c
            m[row : row + nb, cols] -= c * coefs
        row += nb
        for cols, val_c, der_c in ts:
            coefs = val_c if narrow_kind == "val" else der_c
            put(slice(row, row + ns), cols, coefs)
        for cols, val_c, der_c in tb:
            coefs = val_c if narrow_kind == "val" else der_c
            m[row : row + ns, cols] -= c.T * coefs
        row += ns
    assert row == asm.size
    return m


def assemble(g: Geometry, p: SheetPoint, n_lead: int) -> ScatteringSystem:
    """Truncated junction-matching system at a surface point.

    Lead expansions use exp(-s_n |x|) with the branch roots of p, so the
    same system describes bound states on the physical branch and
    resonances on continued branches.  Per-segment truncations follow the
    relative rule ceil(n_lead * width / pi).
    """
    if g.bc is not p.bc:
        raise ValueError("geometry and sheet point use different boundary conditions")
    asm = _Assembly(g, p, n_lead)
    m = _build_matrix(asm)
    sign, logdet = np.linalg.slogdet(m)
    # undo the exponential-basis factor: the entire determinant is reported
    corr = asm.log_basis_factor
    sign = complex(sign) * cmath.exp(-1j * corr.imag)
    return ScatteringSystem(p, g, asm.counts, m, sign, float(logdet) - corr.real)


def det_normalized_log(g: Geometry, p: SheetPoint, n_lead: int) -> complex:
    """log of the normalised matching determinant, log|D| + i arg D.

    The imaginary part is reported in (-pi, pi]; only phase differences
    along paths are meaningful.  The log form exists for any system size,
    while exp of it can overflow for strongly evanescent cavities.
    """
    sys_g = assemble(g, p, n_lead)
    sys_0 = assemble(_free_skeleton(g), p, n_lead)
    phase = cmath.phase(sys_g.det_sign / sys_0.det_sign)
    return complex(sys_g.log_abs_det - sys_0.log_abs_det, phase)


def det_normalized(g: Geometry, p: SheetPoint, n_lead: int) -> complex:
    """Matching determinant divided by the free-strip determinant.

    The normaliser keeps the same junction skeleton and truncation but
    width pi everywhere, so it never vanishes away from thresholds; the
    ratio is 1 for the free strip and analytic in k on each branch, with
    zeros at the resonances.  For large truncations the magnitude can
    exceed the floating range; searches therefore work with
    ``det_normalized_log`` and a constant rescaling.
    """
    ld = det_normalized_log(g, p, n_lead)
    if ld.real > 709.0:
        return cmath.rect(math.inf, ld.imag)
    return cmath.exp(ld)


def _free_skeleton(g: Geometry) -> Geometry:
    segs = tuple(
        s if s.is_lead else Segment(s.length, math.pi, 0.0) for s in g.segments
    )
    return Geometry(segs, g.bc)


def open_channels(bc: BoundaryCondition, k: float) -> list[int]:
    out = []
    n = bc.first_mode
    while n * n < k:
        out.append(n)
        n += 1
    return out


def smatrix(g: Geometry, k: float, n_lead: int) -> SMatrix:
    """Flux-normalised S-matrix at real k on the physical branch.

    Solves the matching system with incoming-wave right-hand sides in
    every open channel of both leads.  k must lie strictly between two
    thresholds.
    """
    chans = open_channels(g.bc, k)
    if not chans:
        raise ZeroChannelError(f"no open channel at k = {k}")
    p = SheetPoint(complex(k, 0.0), frozenset(), g.bc)
    asm = _Assembly(g, p, n_lead)
    m = _build_matrix(asm)

    kappa = np.array([math.sqrt(k - n * n) for n in chans])
    n_open = len(chans)
    idx = {n: i for i, n in enumerate(mode_indices(g.bc, n_lead))}
    chan_rows = [idx[n] for n in chans]

    # incoming traces: value e_j / sqrt(kappa_j), derivative +-i kappa_j * that
    rhs = np.zeros((asm.size, 2 * n_open), dtype=complex)
    segs = g.segments
    last = len(segs) - 1
    for col, (lead_side, j) in enumerate(
        [(0, j) for j in range(n_open)] + [(last, j) for j in range(n_open)]
    ):
        w_u = np.zeros(asm.n_lead, dtype=complex)
        w_u[chan_rows[j]] = 1.0 / math.sqrt(kappa[j])
        sgn = 1.0 if lead_side == 0 else -1.0  # d/dx of e^{+-i kappa (x - X)}
        w_d = sgn * 1j * kappa[j] * w_u
        rhs[:, col] = _incoming_rhs(asm, lead_side, w_u, w_d)

    sol = np.linalg.solve(m, rhs)
    a = sol[asm.col_lead_left(), :]
    b = sol[asm.col_lead_right(), :]
    s = np.empty((2 * n_open, 2 * n_open), dtype=complex)
    root = np.sqrt(kappa)
    s[:n_open, :] = root[:, None] * a[chan_rows, :]
    s[n_open:, :] = root[:, None] * b[chan_rows, :]
    return SMatrix(p, s, n_open)


def _incoming_rhs(
    asm: _Assembly, lead_side: int, w_u: np.ndarray, w_d: np.ndarray
) -> np.ndarray:
    """Right-hand side produced by a known incoming trace on one lead.

    The junction rows are linear in the lead trace; the incoming part is
    moved to the right-hand side with opposite sign.
    """
    g = asm.g
    segs = g.segments
    last = len(segs) - 1
    j = 0 if lead_side == 0 else last - 1
    sl, sr = segs[j], segs[j + 1]
    nl, nr = asm.counts[j], asm.counts[j + 1]
    if _contains(sl, sr):
        big_is_lead = lead_side == j
        nb, ns = nl, nr
        c = overlap_matrix(sl, sr, nl, nr, g.bc)
    else:
        big_is_lead = lead_side == j + 1
        nb, ns = nr, nl
        c = overlap_matrix(sr, sl, nr, nl, g.bc)

    if g.bc is BoundaryCondition.DIRICHLET:
        wide, narrow = w_u, w_d
    else:
        wide, narrow = w_d, w_u

    rhs = np.zeros(asm.size, dtype=complex)
    row0 = _junction_row_offset(asm, j)
    if big_is_lead:
        rhs[row0 : row0 + nb] -= wide
        rhs[row0 + nb : row0 + nb + ns] -= -(c.T @ narrow)
    else:
        rhs[row0 : row0 + nb] -= -(c @ wide)
        rhs[row0 + nb : row0 + nb + ns] -= narrow
    return rhs


def _junction_row_offset(asm: _Assembly, j: int) -> int:
    off = 0
    for i in range(j):
        off += asm.counts[i] + asm.counts[i + 1]
    return off
