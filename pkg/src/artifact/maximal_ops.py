"""Maximal functions, Riesz potentials and weak-type level diagnostics.

Sups over radii run on a geometric grid anchored at powers of two (8 per
octave by default). For atomic parts of a measure the Hardy-Littlewood sup is
additionally evaluated at every atom distance, which is where the ratio
|mu|(B_r)/|B_r| jumps, so pure point masses are handled exactly.
Angular sweeps are two-dimensional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage, signal

from .core_model import (
    ConfigurationError,
    DirectionFn,
    DiscreteMeasure,
    DomainError,
    LevelCurve,
    ScalarGrid,
    as_points,
    geometric_grid,
    level_curve,
    unit_ball_volume,
)

_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class SweepConfig:
    rho_min: float
    rho_max: float
    eval_points: np.ndarray
    per_octave: int = 8
    directions: int = 64

    def __post_init__(self):
        if not (0 < self.rho_min < self.rho_max):
            raise ConfigurationError("need 0 < rho_min < rho_max")
        if self.per_octave < 1 or self.directions < 4:
            raise ConfigurationError("per_octave >= 1 and directions >= 4 required")
        object.__setattr__(self, "eval_points", np.atleast_2d(np.asarray(self.eval_points, dtype=float)))

    def radii(self) -> np.ndarray:
        g = geometric_grid(self.rho_min, self.rho_max, self.per_octave)
        if g.size == 0:
            raise ConfigurationError("empty radii grid")
        return g

    def direction_count(self, eps: Optional[float] = None) -> int:
        if eps is None:
            return self.directions
        return max(self.directions, math.ceil(2 * math.pi / eps) * 4)


def _chunks(m: int, per_row: int):
    step = max(1, _CHUNK_ELEMS // max(per_row, 1))
    for s in range(0, m, step):
        yield slice(s, min(m, s + step))


def _row_searchsorted(sorted_rows: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Per-row count of entries <= query, for row-sorted data (m, n) and queries (m, q)."""
    m, n = sorted_rows.shape
    if n == 0:
        return np.zeros(queries.shape, dtype=int)
    lo = min(sorted_rows.min(), queries.min())
    span = max(sorted_rows.max(), queries.max()) - lo + 1.0
    off = (np.arange(m) * span)[:, None]
    flat = (sorted_rows - lo + off).ravel()
    idx = np.searchsorted(flat, (queries - lo + off).ravel(), side="right")
    return idx.reshape(queries.shape) - (np.arange(m) * n)[:, None]


def _density_ball_mass(dens: ScalarGrid, x: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """|density|(B_r(x)) for eval points x (m, k) and radii (R,), returns (m, R).

    Ball masses are tabulated on the density lattice, extended to cover the
    eval points, by FFT convolution with a sub-sampled ball indicator; radii
    below two cells use the piecewise-constant value times the ball volume.
    """
    k = dens.dim
    h = dens.h
    vals = np.abs(dens.values)
    lo_idx = np.floor((x.min(axis=0) - dens.origin) / h).astype(int) - 1
    hi_idx = np.ceil((x.max(axis=0) - dens.origin) / h).astype(int) + 1
    lo_idx = np.minimum(lo_idx, 0)
    hi_idx = np.maximum(hi_idx, np.asarray(dens.extents))
    shape = tuple(hi_idx - lo_idx)
    big = np.zeros(shape)
    sl = tuple(slice(-l, -l + n) for l, n in zip(lo_idx, dens.extents))
    big[sl] = vals
    # fractional index coordinates of eval points in the extended lattice
    coords = ((x - dens.origin) / h - 0.5 - lo_idx).T
    total = vals.sum() * dens.cell_volume
    diam = h * math.sqrt(sum(s * s for s in shape))
    out = np.empty((x.shape[0], radii.size))
    point_vals = ndimage.map_coordinates(big, coords, order=1, mode="constant", cval=0.0)
    for j, r in enumerate(radii):
        if r < 2 * h:
            out[:, j] = point_vals * unit_ball_volume(k) * r ** k
            continue
        if r >= diam:
            out[:, j] = total
            continue
        kern = _ball_kernel(r, h, k)
        table = signal.fftconvolve(big, kern, mode="same")
        out[:, j] = ndimage.map_coordinates(table, coords, order=1, mode="nearest")
    return np.clip(out, 0.0, None)


def _ball_kernel(r: float, h: float, k: int) -> np.ndarray:
    """Cell weights (volume of cell cap ball) for a ball of radius r centered on a cell."""
    nr = int(math.ceil(r / h + 0.5))
    c = np.arange(-nr, nr + 1) * h
    if k == 1:
        return np.clip(np.minimum(c + h / 2, r) - np.maximum(c - h / 2, -r), 0.0, None)
    sub = int(min(64, max(4, math.ceil(32 * h / r))))
    offs = (np.arange(-nr, nr + 1)[:, None] + (np.arange(sub) + 0.5)[None, :] / sub - 0.5).ravel() * h
    mesh = np.meshgrid(*([offs] * k), indexing="ij")
    inside = (sum(m * m for m in mesh) <= r * r).astype(float)
    kern = inside.reshape(*sum(([2 * nr + 1, sub] for _ in range(k)), [])).sum(axis=tuple(range(1, 2 * k, 2)))
    # rescale so a constant density yields the exact ball volume
    return kern * unit_ball_volume(k) * r ** k / kern.sum()


def hl_maximal(mu: DiscreteMeasure, k: int, cfg: SweepConfig) -> np.ndarray:
    """Centered Hardy-Littlewood maximal function M^k(mu) at cfg.eval_points.

    The measure lives in R^k (a k-dimensional subspace expressed in its own
    coordinates). Balls are closed.
    """
    if mu.k != k:
        raise ConfigurationError("measure dimension must equal k")
    x = as_points(cfg.eval_points, k)
    radii = cfg.radii()
    m = x.shape[0]
    vol_k = unit_ball_volume(k)
    pts, w = mu.points, np.abs(mu.weights)
    keep = w > 0
    pts, w = pts[keep], w[keep]
    n = pts.shape[0]

    dens_grid = None
    if mu.density is not None and np.any(mu.density.values != 0):
        dens_grid = _density_ball_mass(mu.density, x, radii)

    out = np.zeros(m)
    for sl in _chunks(m, max(n, 1) + radii.size):
        xc = x[sl]
        mc = xc.shape[0]
        if n:
            dist = np.linalg.norm(xc[:, None, :] - pts[None, :, :], axis=2)
            order = np.argsort(dist, axis=1)
            ds = np.take_along_axis(dist, order, axis=1)
            cw = np.cumsum(w[order], axis=1)
            cnt = _row_searchsorted(ds, np.broadcast_to(radii, (mc, radii.size)))
            atom_at_grid = np.where(cnt > 0, np.take_along_axis(cw, np.maximum(cnt - 1, 0), axis=1), 0.0)
            # mass at each atom's own distance; ties resolved by counting <=
            cnt_self = _row_searchsorted(ds, ds)
            atom_at_self = np.take_along_axis(cw, cnt_self - 1, axis=1)
        else:
            atom_at_grid = np.zeros((mc, radii.size))
        mass_grid = atom_at_grid
        if dens_grid is not None:
            mass_grid = mass_grid + dens_grid[sl]
        best = (mass_grid / (vol_k * radii ** k)).max(axis=1)
        if n:
            ok = (ds >= cfg.rho_min) & (ds <= cfg.rho_max)
            dmass = 0.0
            if dens_grid is not None:
                dmass = _interp_rows(radii, dens_grid[sl], ds, k)
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = np.where(ok, (atom_at_self + dmass) / (vol_k * np.where(ok, ds, 1.0) ** k), 0.0)
            best = np.maximum(best, cand.max(axis=1))
        out[sl] = best
    return out


def _interp_rows(radii: np.ndarray, table: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    """Row-wise interpolation in r of ball masses table (m, R) at queries q (m, n)."""
    idx = np.clip(np.searchsorted(radii, q), 1, radii.size - 1)
    r0, r1 = radii[idx - 1], radii[idx]
    t0 = np.take_along_axis(table, idx - 1, axis=1)
    t1 = np.take_along_axis(table, idx, axis=1)
    lin = t0 + (t1 - t0) * (q - r0) / (r1 - r0)
    small = q < radii[0]
    lin = np.where(small, table[:, :1] * (q / radii[0]) ** k, lin)
    big = q > radii[-1]
    return np.where(big, table[:, -1:], lin)


def kakeya_maximal(mu: DiscreteMeasure, eps: float, cfg: SweepConfig, eps_max: float = 0.5) -> np.ndarray:
    """Cone-restricted maximal function M^eps(mu) in the plane.

    sup over radii rho and directions e of
    eps^{1-d} |B_rho|^{-1} |mu|({z in B_rho(x): |(z-x)/|z-x| - e| <= eps}).
    Density cells are lumped at their centers.
    """
    if not (0 < eps <= eps_max):
        raise DomainError(f"cone half-width must lie in (0, {eps_max}]")
    if mu.k != 2:
        raise ConfigurationError("cone sweeps are implemented for d = 2")
    x = as_points(cfg.eval_points, 2)
    radii = cfg.radii()
    D = cfg.direction_count(eps)
    pts, w = mu.as_atoms()
    w = np.abs(w)
    keep = w > 0
    pts, w = pts[keep], w[keep]
    out = np.zeros(x.shape[0])
    if pts.shape[0] == 0:
        return out
    vol = unit_ball_volume(2) * radii ** 2
    n = pts.shape[0]
    if n * n <= 2 * D * radii.size:
        for sl in _chunks(x.shape[0], n * n * 2):
            out[sl] = _cone_sup_candidates(x[sl], pts, w, eps, radii, D, vol) / eps
    else:
        for sl, cm in _cone_ball_masses(x, pts, w, eps, radii, D):
            out[sl] = (cm / vol).max(axis=(1, 2)) / eps
    return out


def _cone_geometry(xc, pts, eps, radii, D):
    beta = 2 * math.asin(eps / 2)  # chord <= eps  <=>  angle <= beta
    delta = 2 * math.pi / D
    diff = pts[None, :, :] - xc[:, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    phi = np.arctan2(diff[..., 1], diff[..., 0])
    rb = np.searchsorted(radii, dist, side="left")
    valid = (dist > 0) & (rb < radii.size)
    jl = np.ceil((phi - beta) / delta - 1e-12).astype(np.int64)
    jh = np.floor((phi + beta) / delta + 1e-12).astype(np.int64)
    jl0 = np.mod(jl, D)
    return rb, valid, jl0, jh - jl


def _cone_sup_candidates(xc, pts, w, eps, radii, D, vol):
    """Exact sup over the (direction, radius) grid using only the breakpoints of few atoms.

    The cone mass is piecewise constant in the direction index and only
    increases at some atom's first admissible direction, so those indices
    suffice; likewise only radii bins holding an atom can be maximizers.
    """
    rb, valid, jl0, span = _cone_geometry(xc, pts, eps, radii, D)
    wv = np.where(valid, w[None, :], 0.0)
    order = np.argsort(rb, axis=1, kind="stable")
    rb_s = np.take_along_axis(rb, order, axis=1)
    w_s = np.take_along_axis(wv, order, axis=1)
    jl_s = np.take_along_axis(jl0, order, axis=1)
    span_s = np.take_along_axis(span, order, axis=1)
    # mem[i, a, c]: atom c lies in the cone starting at atom a's first direction
    mem = np.mod(jl_s[:, :, None] - jl_s[:, None, :], D) <= span_s[:, None, :]
    cum = np.cumsum(mem * w_s[:, None, :], axis=2)
    inv_vol = np.where(rb_s < radii.size, 1.0 / vol[np.minimum(rb_s, radii.size - 1)], 0.0)
    return (cum * inv_vol[:, None, :]).max(axis=(1, 2))


def _cone_ball_masses(x, pts, w, eps, radii, D):
    """Yield (slice, masses) with masses[i, j, r] = |mu|(cone_j(x_i) cap B_{radii[r]}(x_i))."""
    R = radii.size
    n = pts.shape[0]
    per_row = max(n * 3, (2 * D + 1) * R)
    for sl in _chunks(x.shape[0], per_row):
        xc = x[sl]
        mc = xc.shape[0]
        rb, valid, jl0, span = _cone_geometry(xc, pts, eps, radii, D)
        jh0 = jl0 + span
        rows = np.broadcast_to(np.arange(mc)[:, None], rb.shape)
        wb = np.broadcast_to(w, rb.shape)
        rows, jl0, jh0, rb, wv = rows[valid], jl0[valid], jh0[valid], rb[valid], wb[valid]
        stride = 2 * D + 1
        size = mc * stride * R
        acc = np.bincount((rows * stride + jl0) * R + rb, weights=wv, minlength=size)
        acc -= np.bincount((rows * stride + jh0 + 1) * R + rb, weights=wv, minlength=size)
        acc = acc.reshape(mc, stride, R)
        np.cumsum(acc, axis=1, out=acc)
        cone = acc[:, :D, :] + acc[:, D : 2 * D, :]
        np.cumsum(cone, axis=2, out=cone)
        yield sl, cone


def riesz_potential(mu: DiscreteMeasure, alpha: float, eval_points, h: Optional[float] = None) -> np.ndarray:
    """I_alpha(mu)(x) = int |x - z|^{alpha - k} d mu(z).

    Atoms within h/2 of an eval point are evaluated at distance h/2. Density
    cells use the midpoint rule with the same cap at h = density spacing.
    """
    k = mu.k
    if not (0 < alpha < k):
        raise DomainError("alpha must lie in (0, k)")
    x = as_points(eval_points, k)
    out = np.zeros(x.shape[0])
    parts = [(mu.points, mu.weights, h)]
    if mu.density is not None:
        d = mu.density
        parts.append((d.centers(), d.values.ravel() * d.cell_volume, d.h if h is None else h))
    for pts, w, cap in parts:
        if pts.shape[0] == 0:
            continue
        for sl in _chunks(x.shape[0], pts.shape[0]):
            dist = np.linalg.norm(x[sl, None, :] - pts[None, :, :], axis=2)
            if cap is None:
                if np.any(dist == 0):
                    raise DomainError("eval point coincides with an atom; pass h to regularize")
            else:
                dist = np.maximum(dist, cap / 2)
            out[sl] += (dist ** (alpha - k)) @ w
    return out


def directional_maximal(omega, f: ScalarGrid, cfg: SweepConfig) -> np.ndarray:
    """M^Omega f(x) = sup_rho rho^{-d} int_{B_rho(x)} |Omega((x-y)/|x-y|)| |f(y)| dy (d = 2)."""
    if f.dim != 2:
        raise ConfigurationError("directional maximal operator is implemented for d = 2")
    if isinstance(omega, DirectionFn):
        wfun = omega.at_vectors
    else:
        wfun = omega
    x = as_points(cfg.eval_points, 2)
    radii = cfg.radii()
    pts = f.centers()
    fm = np.abs(f.values.ravel()) * f.cell_volume
    keep = fm > 0
    pts, fm = pts[keep], fm[keep]
    out = np.zeros(x.shape[0])
    if pts.shape[0] == 0:
        return out
    for sl in _chunks(x.shape[0], pts.shape[0] * 2):
        diff = x[sl, None, :] - pts[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        wts = np.abs(wfun(diff)) * fm
        wts = np.where(dist > 0, wts, 0.0)
        order = np.argsort(dist, axis=1)
        ds = np.take_along_axis(dist, order, axis=1)
        cw = np.cumsum(np.take_along_axis(wts, order, axis=1), axis=1)
        cnt = _row_searchsorted(ds, np.broadcast_to(radii, (ds.shape[0], radii.size)))
        mass = np.where(cnt > 0, np.take_along_axis(cw, np.maximum(cnt - 1, 0), axis=1), 0.0)
        out[sl] = (mass / radii ** 2).max(axis=1)
    return out


@dataclass(frozen=True)
class Weak11Result:
    curve: LevelCurve
    tail: float
    boundary_contact: bool


def weak11_statistic(values: ScalarGrid, lambdas: Sequence[float]) -> Weak11Result:
    """Level curve plus max of lam * |{v > lam}| over the top decade of the lambda grid."""
    curve = level_curve(values, lambdas)
    lam = curve.lambdas
    top = lam >= lam[-1] / 10.0
    tail = float(curve.values[top].max())
    lam_lo = lam[top].min()
    return Weak11Result(curve, tail, _touches_boundary(values, lam_lo))


def _touches_boundary(values: ScalarGrid, lam: float) -> bool:
    v = values.values
    for ax in range(v.ndim):
        for idx in (0, -1):
            if np.any(np.take(v, idx, axis=ax) > lam):
                return True
    return False


@dataclass(frozen=True)
class DetectorResult:
    statistic: float
    reference: float
    boundary_contact: bool

    @property
    def calibrated(self) -> float:
        """Statistic divided by the unit-Dirac reference, an estimate of atomic mass."""
        return self.statistic / self.reference if self.reference > 0 else float("nan")


def _region_cfg(region: ScalarGrid, rho_max: Optional[float] = None, per_octave: int = 8) -> SweepConfig:
    diam = region.h * math.sqrt(sum(n * n for n in region.extents))
    return SweepConfig(region.h / 4, rho_max or 2 * diam, region.centers(), per_octave)


def singular_mass_detector(mu: DiscreteMeasure, region: ScalarGrid, lam_top: float,
                           rho_max: Optional[float] = None) -> DetectorResult:
    """lam_top * L^d({M(mu) > lam_top} within region), with a unit-Dirac calibration."""
    if not lam_top > 0:
        raise DomainError("lam_top must be positive")
    cfg = _region_cfg(region, rho_max)
    k = region.dim
    vals = region.with_values(hl_maximal(mu, k, cfg))
    stat = lam_top * np.count_nonzero(vals.values > lam_top) * region.cell_volume
    center = region.origin + 0.5 * region.h * np.asarray(region.extents)
    ref_vals = hl_maximal(DiscreteMeasure.dirac(center, 1.0, k), k, cfg)
    ref = lam_top * np.count_nonzero(ref_vals > lam_top) * region.cell_volume
    return DetectorResult(float(stat), float(ref), _touches_boundary(vals, lam_top))


def truncated_log_diagnostic(f: ScalarGrid, mu: DiscreteMeasure, delta: float,
                             region: Optional[tuple] = None, rho_max: Optional[float] = None) -> float:
    """(1/|log delta|) int_region min(|f|/delta, M(mu)) by the midpoint rule on f's grid."""
    if not (0 < delta < 1):
        raise DomainError("delta must lie in (0, 1)")
    pts = f.centers()
    fv = np.abs(f.values.ravel())
    if region is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in region)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        pts, fv = pts[inside], fv[inside]
    diam = f.h * math.sqrt(sum(n * n for n in f.extents))
    cfg = SweepConfig(f.h / 4, rho_max or diam, pts)
    M = hl_maximal(mu, f.dim, cfg)
    return float(np.minimum(fv / delta, M).sum() * f.cell_volume / abs(math.log(delta)))
