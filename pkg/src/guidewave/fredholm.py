"""Cutoff-resolvent determinant on a finite-difference grid.

The perturbed resolvent is approximated by a parametrix: a reference
solve at a fixed spectral point k0 deep in the upper half plane, glued by
smooth radial cutoffs to the analytic free-strip kernel carrying the
branch data of the evaluation point.  The defect operator

    K = (k0 - k) t1 R(k0) x1  +  [L, t1] R(k0) x1  +  [L, t2] R0(k) x2

(with L the positive Laplacian, x1 + x2 = 1 a partition of unity and
t1, t2 hats over the supports of x1, x2) is compactly supported, and
det(I + (K rho)^3) vanishes at the resonances.  R(k0) is realised by a
sparse factorisation on the capped grid; R0(k) by the strip mode kernel,
which is what carries the branch continuation.

Discretisation: the grid is a global tensor grid, snapped so that every
wall lies on a cell edge (the geometry must be commensurate); the
integral operators are sampled on a strided Nystrom subset of the nodes
carrying supp(rho), with cell-area quadrature weights.  stride=1
reproduces the full node set when affordable.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Geometry, GeometryError, validate
from .sheet import BoundaryCondition, SheetPoint, branch_sqrt_array

_GAUSS4 = (
    (0.069431844202973714, 0.17392742256872693),
    (0.33000947820757187, 0.32607257743127305),
    (0.66999052179242813, 0.32607257743127305),
    (0.93056815579702623, 0.17392742256872693),
)


class GridError(ValueError):
    pass


def _smoothstep(t):
    """Quintic 0->1 ramp, C^2 at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _real_gcd(values, tol=1e-9):
    """Approximate positive gcd of a set of lengths."""
    vals = [abs(v) for v in values if abs(v) > tol]
    if not vals:
        raise GridError("no lengths to make a grid from")
    g = vals[0]
    for v in vals[1:]:
        a, b = max(g, v), min(g, v)
        while b > tol:
            a, b = b, a % b
            if 0 < b < tol * 10:
                b = 0.0
        g = a
    for v in vals:
        if abs(v / g - round(v / g)) > 1e-6:
            raise GridError("geometry walls are not commensurate; no aligned grid")
    return g


@dataclass
class GridModel:
    """Capped tensor grid with cutoff samples and commutator matrices."""

    geometry: Geometry
    hx: float
    hy: float
    x_cap: float
    xs: np.ndarray          # cell-centre x of every node
    ys: np.ndarray
    col: np.ndarray         # x-column index of every node
    col_x: np.ndarray       # x value per column
    lap: sp.csr_matrix      # positive five-point Laplacian with bc
    chi1: np.ndarray
    chi2: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    rho: np.ndarray
    comm1: sp.csr_matrix    # [lap, tau1]
    comm2: sp.csr_matrix    # [lap, tau2]
    M: float
    _factors: dict = field(default_factory=dict, repr=False)
    _blocks: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.xs)

    def factor(self, k0: complex):
        key = complex(k0)
        if key not in self._factors:
            a = (self.lap - k0 * sp.identity(self.n_nodes, format="csr")).tocsc()
            self._factors[key] = spla.splu(a)
        return self._factors[key]


def build_grid(g: Geometry, h: float, x_cap: float) -> GridModel:
    """Cell-centred grid over the capped domain with walls on cell edges.

    The steps are snapped so that every wall coordinate (segment offsets,
    widths, junction positions) is an integer number of cells from the
    grid origin; incommensurate geometries are rejected.  Cutoffs are
    radial quintic ramps at radii M+1 .. M+4; for the free strip the
    perturbation patch is empty and all defect terms vanish identically.
    """
    bad = validate(g)
    if bad:
        raise GeometryError("; ".join(bad))
    if x_cap < g.M + 6.0:
        raise GridError("x_cap must be at least M + 6")

    walls_y = sorted({s.offset for s in g.segments} | {s.offset + s.width for s in g.segments})
    y_min = walls_y[0]
    gaps = [w - y_min for w in walls_y[1:]]
    gy = _real_gcd(gaps)
    hy = gy / math.ceil(gy / h - 1e-12)
    spans = g.x_spans()
    lengths = [s.length for s in g.interior]
    gx = _real_gcd(lengths) if lengths else h
    hx = gx / math.ceil(gx / h - 1e-12)

    narrow = min([s.width for s in g.segments] + [l for l in lengths] or [math.inf])
    if narrow / min(hx, hy) < 8:
        raise GridError("fewer than 8 cells across the narrowest feature")

    x_left = spans[1][0] if len(spans) > 2 else 0.0
    n_left = math.ceil((x_left + x_cap) / hx - 1e-12)
    x0 = x_left - n_left * hx
    n_cols = math.ceil((x_cap - x0) / hx - 1e-12)

    def segment_at(x: float):
        for (a, b), seg in zip(spans, g.segments):
            if a <= x < b:
                return seg
        return g.segments[-1]

    xs, ys, cols = [], [], []
    col_x = np.empty(n_cols)
    for j in range(n_cols):
        xc = x0 + (j + 0.5) * hx
        col_x[j] = xc
        seg = segment_at(xc)
        i0 = round((seg.offset - y_min) / hy)
        n_y = round(seg.width / hy)
        for i in range(i0, i0 + n_y):
            xs.append(xc)
            ys.append(y_min + (i + 0.5) * hy)
            cols.append(j)
    xs = np.array(xs)
    ys = np.array(ys)
    cols = np.array(cols)
    index = {(j, round((y - y_min) / hy - 0.5)): a for a, (j, y) in enumerate(zip(cols, ys))}

    n = len(xs)
    neumann = g.bc is BoundaryCondition.NEUMANN
    rows_l, cols_l, vals_l = [], [], []
    inv_hx2, inv_hy2 = 1.0 / (hx * hx), 1.0 / (hy * hy)
    for a in range(n):
        j = cols[a]
        i = round((ys[a] - y_min) / hy - 0.5)
        diag = 2.0 * inv_hx2 + 2.0 * inv_hy2
        for dj, di, w in ((1, 0, inv_hx2), (-1, 0, inv_hx2), (0, 1, inv_hy2), (0, -1, inv_hy2)):
            b = index.get((j + dj, i + di))
            if b is not None:
                rows_l.append(a)
                cols_l.append(b)
                vals_l.append(-w)
            else:
                # wall or cap: ghost reflection; cap ends are always Dirichlet
                at_cap = dj != 0 and not (0 <= j + dj < n_cols)
                if neumann and not at_cap:
                    diag -= w
                else:
                    diag += w
        rows_l.append(a)
        cols_l.append(a)
        vals_l.append(diag)
    lap = sp.csr_matrix((vals_l, (rows_l, cols_l)), shape=(n, n))

    r = np.hypot(xs, ys)
    m = g.M
    if g.is_free_strip():
        chi1 = np.zeros(n)
        tau1 = np.zeros(n)
        tau2 = np.ones(n)
    else:
        chi1 = 1.0 - _smoothstep(r - (m + 1.0))
        tau1 = 1.0 - _smoothstep(r - (m + 2.0))
        tau2 = _smoothstep(r - m)
    chi2 = 1.0 - chi1
    rho = 1.0 - _smoothstep(r - (m + 3.0))

    def commutator(tau):
        d = sp.diags(tau)
        return (lap @ d - d @ lap).tocsr()

    return GridModel(
        geometry=g, hx=hx, hy=hy, x_cap=-x0, xs=xs, ys=ys, col=cols, col_x=col_x,
        lap=lap, chi1=chi1, chi2=chi2, tau1=tau1, tau2=tau2, rho=rho,
        comm1=commutator(tau1), comm2=commutator(tau2), M=m,
    )


@dataclass(frozen=True)
class ReferenceSolve:
    """Factorised (lap - k0) solve plus its cap-truncation error bound."""

    gm: GridModel
    k0: complex
    cap_error: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.gm.factor(self.k0).solve(np.asarray(b, dtype=complex))


def reference_resolvent(gm: GridModel, k0: complex) -> ReferenceSolve:
    """Reference resolvent at a point deep in the upper half plane.

    The Dirichlet cap at |x| = x_cap perturbs the kernel on the cutoff
    region by at most exp(-Re sqrt(-k0) * (x_cap - M - 4)), reported as
    cap_error.
    """
    if k0.imag < 25.0:
        raise ValueError("reference point needs Im k0 >= 25")
    rate = cmath.sqrt(-k0).real
    err = math.exp(-rate * (gm.x_cap - gm.M - 4.0))
    return ReferenceSolve(gm, complex(k0), err)


# --- strip kernel on node sets (sheet-aware, diagonally regularised) -----

def _transverse_matrix(bc: BoundaryCondition, ys: np.ndarray, ns: np.ndarray):
    if bc is BoundaryCondition.DIRICHLET:
        return np.sin(np.outer(ys, ns))
    out = np.cos(np.outer(ys, ns))
    return out


def _exx(s, a: float, hx: float):
    """exp(-s a), averaged over the x-quadrature cell when a == 0."""
    if a > 0.0:
        return np.exp(-s * a)
    z = 0.5 * hx * s
    return np.where(np.abs(z) < 1e-8, 1.0 - 0.5 * z, (1.0 - np.exp(-z)) / z)


def _static_log_sum(bc, a, yr, yc):
    """Closed form of sum (1/n) e^{-n a} f_n(y) f_n(y'), f = sin or cos."""
    e = math.exp(-a)
    mm = 1.0 - 2.0 * e * np.cos(np.subtract.outer(yr, yc)) + e * e
    mp = 1.0 - 2.0 * e * np.cos(np.add.outer(yr, yc)) + e * e
    lm = np.log(np.maximum(mm, 1e-300))
    lp = np.log(np.maximum(mp, 1e-300))
    if bc is BoundaryCondition.DIRICHLET:
        return 0.25 * (lp - lm)
    return -0.25 * (lm + lp)


def strip_kernel(
    p: SheetPoint,
    row_xy: tuple[np.ndarray, np.ndarray],
    col_xy: tuple[np.ndarray, np.ndarray],
    n_max: int,
    hx: float,
) -> np.ndarray:
    """Strip Green's kernel between two node sets on the branch of p.

    The static (k = 0 like) part of the mode sum is evaluated in closed
    form, the k-dependent remainder converges absolutely like n**-3.
    Pairs in the same x-column are averaged over the x-cell, which
    regularises the diagonal logarithm consistently with the Nystrom
    quadrature.
    """
    xr, yr = row_xy
    xc, yc = col_xy
    ns, s = branch_sqrt_array(p, n_max)
    nsf = ns.astype(float)
    bc = p.bc
    fr = _transverse_matrix(bc, yr, ns)
    fc = _transverse_matrix(bc, yc, ns)

    out = np.zeros((len(xr), len(xc)), dtype=complex)
    # group rows and columns by x to share per-distance mode weights
    order_r = np.argsort(xr, kind="stable")
    order_c = np.argsort(xc, kind="stable")
    xr_sorted = xr[order_r]
    xc_sorted = xc[order_c]
    row_groups = _runs(xr_sorted)
    col_groups = _runs(xc_sorted)

    for rs, re_ in row_groups:
        ridx = order_r[rs:re_]
        for cs, ce in col_groups:
            cidx = order_c[cs:ce]
            a = abs(xr_sorted[rs] - xc_sorted[cs])
            same_col = a < 0.5 * hx
            aa = 0.0 if same_col else a
            if bc is BoundaryCondition.DIRICHLET:
                w = _exx(s, aa, hx) / s - _exx(nsf, aa, hx) / nsf
                static = _static_part(bc, aa, yr[ridx], yc[cidx], hx)
            else:
                w = np.empty_like(s)
                w[0] = _exx(s[0:1], aa, hx)[0] / (math.pi * s[0])
                w[1:] = _exx(s[1:], aa, hx) / s[1:] - _exx(nsf[1:], aa, hx) / nsf[1:]
                static = _static_part(bc, aa, yr[ridx], yc[cidx], hx)
            if bc is BoundaryCondition.NEUMANN:
                corr = (fr[ridx][:, 1:] * w[1:]) @ fc[cidx][:, 1:].T
                corr += np.outer(fr[ridx][:, 0], fc[cidx][:, 0]) * w[0]
            else:
                corr = (fr[ridx] * w) @ fc[cidx].T
            out[np.ix_(ridx, cidx)] = static + corr
    return out


def _static_part(bc, a, yr, yc, hx):
    if a > 0.0:
        return _static_log_sum(bc, a, yr, yc)
    acc = 0.0
    for t, wq in _GAUSS4:
        acc = acc + wq * _static_log_sum(bc, 0.5 * hx * t, yr, yc)
    return acc


def _runs(sorted_vals: np.ndarray):
    runs = []
    start = 0
    for i in range(1, len(sorted_vals) + 1):
        if i == len(sorted_vals) or sorted_vals[i] != sorted_vals[start]:
            runs.append((start, i))
            start = i
    return runs


# --- Nystrom realisation of the defect operator -------------------------

def nystrom_indices(gm: GridModel, stride: tuple[int, int]) -> np.ndarray:
    """Strided subset of the nodes carrying supp(rho)."""
    sx, sy = stride
    y_key = np.round((gm.ys - gm.ys.min()) / gm.hy - 0.5).astype(int)
    keep = (
        (gm.rho > 0)
        & (gm.col % sx == sx // 2)
        & (y_key % sy == sy // 2)
    )
    return np.nonzero(keep)[0]


def auto_stride(gm: GridModel, target: int = 3400) -> tuple[int, int]:
    n_supp = int(np.sum(gm.rho > 0))
    s = 1
    while n_supp / (s * s) > target:
        s += 1
    return (s, s)


def _fixed_blocks(gm: GridModel, k0: complex, stride: tuple[int, int]):
    """Nystrom blocks of the reference-resolvent terms, cached per grid.

    A[i, j] ~ kernel of R(k0), B[i, j] ~ kernel of [lap, tau1] R(k0),
    both between Nystrom nodes and already carrying the stride part of
    the quadrature weight (the discrete solve supplies 1/cell-area).
    """
    key = (complex(k0), stride)
    if key in gm._blocks:
        return gm._blocks[key]
    ny = nystrom_indices(gm, stride)
    lu = gm.factor(k0)
    n = gm.n_nodes
    m = len(ny)
    a_blk = np.empty((m, m), dtype=complex)
    b_blk = np.empty((m, m), dtype=complex)
    scale = stride[0] * stride[1]
    chunk = 192
    for s0 in range(0, m, chunk):
        sel = ny[s0 : s0 + chunk]
        rhs = np.zeros((n, len(sel)), dtype=complex)
        rhs[sel, np.arange(len(sel))] = 1.0
        sol = lu.solve(rhs)
        a_blk[:, s0 : s0 + chunk] = sol[ny, :] * scale
        b_blk[:, s0 : s0 + chunk] = (gm.comm1 @ sol)[ny, :] * scale
    gm._blocks[key] = (ny, a_blk, b_blk)
    return gm._blocks[key]


def k_matrix(
    gm: GridModel,
    p: SheetPoint,
    k0: complex,
    stride: tuple[int, int] | None = None,
    n_max: int = 80,
) -> np.ndarray:
    """Defect operator times rho as a matrix on the Nystrom node set.

    The reference-resolvent terms are fixed blocks reused across
    evaluation points; only the strip-kernel term is rebuilt, carrying
    the branch data of p.  The rows vanish outside the cutoff gradients,
    mirroring rho K = K at the discrete level.
    """
    if gm.geometry.bc is not p.bc:
        raise ValueError("grid and sheet point use different boundary conditions")
    if stride is None:
        stride = auto_stride(gm)
    ny, a_blk, b_blk = _fixed_blocks(gm, k0, stride)
    w_cell = stride[0] * stride[1] * gm.hx * gm.hy

    col_w1 = gm.chi1[ny] * gm.rho[ny]
    col_w2 = gm.chi2[ny] * gm.rho[ny]
    t = (k0 - p.k) * (gm.tau1[ny][:, None] * a_blk) * col_w1[None, :]
    t += b_blk * col_w1[None, :]

    if np.any(col_w2 > 0):
        c2 = gm.comm2[ny, :]
        s2 = np.unique(c2.nonzero()[1])
        if len(s2):
            gk = strip_kernel(
                p, (gm.xs[s2], gm.ys[s2]), (gm.xs[ny], gm.ys[ny]), n_max, gm.hx
            )
            t += (c2[:, s2] @ gk) * (col_w2 * w_cell)[None, :]
    return t


@dataclass(frozen=True)
class DetEval:
    point: SheetPoint
    h_value: complex
    log_abs: float
    cond_estimate: float


def defect_det(
    gm: GridModel,
    p: SheetPoint,
    k0: complex,
    stride: tuple[int, int] | None = None,
    n_max: int = 80,
) -> DetEval:
    """Determinant of I + (K rho)^3; its zeros locate the resonances."""
    t = k_matrix(gm, p, k0, stride, n_max)
    t3 = t @ t @ t
    t3[np.diag_indices_from(t3)] += 1.0
    sign, logabs = np.linalg.slogdet(t3)
    cond = float(np.linalg.norm(t3, 1))
    val = complex(sign) * math.exp(min(logabs, 700.0))
    return DetEval(p, val, float(logabs), cond)


h_det = defect_det


@dataclass(frozen=True)
class SvReport:
    singular_smooth: np.ndarray
    singular_commutator: np.ndarray
    slope_smooth: float
    slope_commutator: float
    fit_range: tuple[int, int]


def sv_decay(
    gm: GridModel,
    p: SheetPoint,
    k0: complex,
    stride: tuple[int, int] | None = None,
    fit_range: tuple[int, int] = (10, 200),
) -> SvReport:
    """Singular-value decay of the two reference-resolvent constituents.

    The smoothing factor t1 R(k0) x1 rho decays like j**-1 and the
    commutator factor [lap, t1] R(k0) x1 rho like j**-0.5, matching the
    symbol orders -2 and -1 of the underlying operators in two
    dimensions; slopes are fitted on log-log over fit_range (within the
    range resolved by the grid, before the discretisation cutoff).
    """
    if stride is None:
        stride = auto_stride(gm)
    ny, a_blk, b_blk = _fixed_blocks(gm, k0, stride)
    col_w = gm.chi1[ny] * gm.rho[ny]
    m1 = gm.tau1[ny][:, None] * a_blk * col_w[None, :]
    m2 = b_blk * col_w[None, :]
    sv1 = np.linalg.svd(m1, compute_uv=False)
    sv2 = np.linalg.svd(m2, compute_uv=False)

    def fit(svs):
        j0, j1 = fit_range
        j1 = min(j1, len(svs))
        js = np.arange(j0, j1)
        keep = svs[js] > 1e-14 * svs[0]
        return float(np.polyfit(np.log(js[keep]), np.log(svs[js][keep]), 1)[0])

    return SvReport(sv1, sv2, fit(sv1), fit(sv2), fit_range)


@dataclass(frozen=True)
class LaurentReport:
    threshold: int
    radius: float
    norm_a: float
    norm_b: float
    norm_c: float
    dropped_samples: int


def _threshold_pattern(bc: BoundaryCondition, L: int, z: complex) -> frozenset:
    im_k = -2.0 * z.real * z.imag
    lam = frozenset(range(bc.first_mode, L)) if im_k < 0 else frozenset()
    if z.real < 0:
        lam = lam | {L}
    return lam


def threshold_laurent(
    gm: GridModel,
    L: int,
    radius: float,
    k0: complex,
    stride: tuple[int, int] | None = None,
    n_samples: int = 12,
    n_max: int = 80,
) -> LaurentReport:
    """Laurent structure of the cutoff resolvent at the threshold L**2.

    Samples rho R(k) rho = rho R_a(k) rho (I + K rho)^{-1} on a circle in
    the local coordinate k = L**2 - z**2 and fits A/z**2 + B/z + C.  A is
    the projection onto any eigenspace pinned at the threshold, so its
    norm vanishes when no threshold eigenvalue exists; B carries the
    half-bound structure.
    """
    if not (0.0 < radius < 0.5):
        raise ValueError("radius must lie in (0, 0.5)")
    if stride is None:
        stride = auto_stride(gm)
    ny, a_blk, b_blk = _fixed_blocks(gm, k0, stride)
    w_cell = stride[0] * stride[1] * gm.hx * gm.hy
    m = len(ny)
    acc = [np.zeros((m, m), dtype=complex) for _ in range(3)]
    dropped = 0
    used = 0
    for j in range(n_samples):
        theta = 2.0 * math.pi * (j + 0.371) / n_samples
        z = radius * cmath.exp(1j * theta)
        k = L * L - z * z
        p = SheetPoint(k, _threshold_pattern(gm.geometry.bc, L, z), gm.geometry.bc)
        try:
            f = _cutoff_resolvent(gm, p, k0, stride, n_max, ny, a_blk, b_blk, w_cell)
        except np.linalg.LinAlgError:
            dropped += 1
            continue
        zf = z * z * f
        for pw in range(3):
            acc[pw] += zf / z**pw
        used += 1
    if used == 0:
        raise ArithmeticError("every circle sample was singular")
    norms = [np.linalg.norm(a, 2) / used for a in acc]
    return LaurentReport(L, radius, norms[0], norms[1], norms[2], dropped)


def _cutoff_resolvent(gm, p, k0, stride, n_max, ny, a_blk, b_blk, w_cell):
    """rho R_a rho (I + K rho)^{-1} as a Nystrom matrix."""
    krho = k_matrix(gm, p, k0, stride, n_max)
    ra = gm.tau1[ny][:, None] * a_blk * (gm.chi1[ny])[None, :]
    g0 = strip_kernel(p, (gm.xs[ny], gm.ys[ny]), (gm.xs[ny], gm.ys[ny]), n_max, gm.hx)
    ra = ra + gm.tau2[ny][:, None] * g0 * (gm.chi2[ny] * w_cell)[None, :]
    ra = gm.rho[ny][:, None] * ra * gm.rho[ny][None, :]
    eye = np.eye(len(ny), dtype=complex)
    return np.linalg.solve((eye + krho).T, ra.T).T


@dataclass(frozen=True)
class NormScan:
    ks: np.ndarray
    norms: np.ndarray
    growth_exponent: float


def resolvent_norm_scan(
    gm: GridModel,
    k_list,
    k0: complex,
    stride: tuple[int, int] | None = None,
    n_max: int = 80,
) -> NormScan:
    """Cutoff-resolvent norm along real energies, with a power-law fit."""
    if stride is None:
        stride = auto_stride(gm)
    ny, a_blk, b_blk = _fixed_blocks(gm, k0, stride)
    w_cell = stride[0] * stride[1] * gm.hx * gm.hy
    norms = []
    for k in k_list:
        p = SheetPoint(complex(k), frozenset(), gm.geometry.bc)
        f = _cutoff_resolvent(gm, p, k0, stride, n_max, ny, a_blk, b_blk, w_cell)
        norms.append(float(np.linalg.norm(f, 2)))
    ks = np.asarray([float(k.real) if isinstance(k, complex) else float(k) for k in k_list])
    norms = np.asarray(norms)
    keep = (ks > 0) & (norms > 0)
    slope = float(np.polyfit(np.log(ks[keep]), np.log(norms[keep]), 1)[0]) if keep.sum() > 3 else math.nan
    return NormScan(ks, norms, slope)
