"""Particle flows of planar fields.

Fixed-step classical RK4 on lattice clouds, empirical compressibility,
the sets G_R, Jacobian tracking, the semigroup residual, and the two
closed-form branch flows of the counterexample field.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .bv_fields import (
    LOWER_INNER,
    LOWER_OUTER,
    UPPER_INNER,
    UPPER_OUTER,
    FieldSpec,
    central_divergence,
    counterexample_field,
    counterexample_region,
)
from .core_model import ConfigurationError, DomainError, ScalarGrid, as_points

__all__ = [
    "ParticleCloud",
    "ParticleFlow",
    "JacobianTrack",
    "CompressibilityReport",
    "SemigroupResult",
    "integrate_flow",
    "compressibility",
    "sublevel_GR",
    "jacobian_track",
    "semigroup_residual",
    "counterexample_flows",
    "counterexample_positions",
    "counterexample_ode_residual",
]


@dataclass(frozen=True)
class ParticleCloud:
    """Particles at the cell centers of a uniform lattice with spacing h."""

    points: np.ndarray
    h: float
    shape: Optional[tuple] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = as_points(self.points, 2)
        if not self.h > 0:
            raise ConfigurationError("lattice spacing must be positive")
        if not np.all(np.isfinite(pts)):
            raise ConfigurationError("particle positions must be finite")
        if self.shape is not None and int(np.prod(self.shape)) != len(pts):
            raise ConfigurationError("lattice shape does not match the particle count")
        labels = np.arange(len(pts)) if self.labels is None else np.asarray(self.labels)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def lattice(cls, lo, hi, h: float) -> "ParticleCloud":
        g = ScalarGrid.box(lo, hi, h)
        return cls(g.centers(), h, g.extents)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def cell_measure(self) -> float:
        return self.h ** 2

    def in_ball(self, r: float) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1) < r

    def axes(self) -> list:
        if self.shape is None:
            raise ConfigurationError("cloud is not a lattice")
        P = self.points.reshape(*self.shape, 2)
        return [P[:, 0, 0], P[0, :, 1]]


@dataclass
class ParticleFlow:
    """Stored positions X(times[j], points[i]) with escape flags and region history."""

    cloud: ParticleCloud
    times: np.ndarray
    positions: np.ndarray
    escaped: np.ndarray
    regions: Optional[np.ndarray] = None
    scheme: str = "rk4"
    dt: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def valid(self) -> np.ndarray:
        return ~self.escaped

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigurationError(f"time {t} is not stored")
        return j

    def to_csv(self, path=None, every: int = 1) -> str:
        buf = io.StringIO()
        has_region = self.regions is not None
        buf.write("particle_id,t,x1,x2" + (",region" if has_region else "") + "\n")
        for j in range(0, len(self.times), every):
            for i in np.flatnonzero(self.valid):
                x = self.positions[j, i]
                row = f"{self.cloud.labels[i]},{self.times[j]:.17g},{x[0]:.17g},{x[1]:.17g}"
                if has_region:
                    row += f",{self.regions[j, i]}"
                buf.write(row + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True)
class JacobianTrack:
    times: np.ndarray
    jx_exp: np.ndarray
    jx_fd: np.ndarray

    def max_discrepancy(self) -> float:
        diff = np.abs(self.jx_exp - self.jx_fd)
        return float(np.nanmax(diff)) if np.any(np.isfinite(diff)) else float("nan")

    def to_csv(self, labels, path=None) -> str:
        lines = ["particle_id,t,jx_exp,jx_fd"]
        for j, t in enumerate(self.times):
            for i, lab in enumerate(labels):
                lines.append(f"{lab},{t:.17g},{self.jx_exp[j, i]:.17g},{self.jx_fd[j, i]:.17g}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True)
class CompressibilityReport:
    L: float
    min_density: float
    densities: np.ndarray
    underresolved: bool
    excluded: int


@dataclass(frozen=True)
class SemigroupResult:
    residual: float
    used: int
    excluded: int


# ------------------------------------------------------------ integration


def _steps(t0: float, T: float, dt: float):
    if not dt > 0:
        raise DomainError("dt must be positive")
    span = T - t0
    n = max(1, int(np.ceil(abs(span) / dt - 1e-9)))
    return n, span / n


def integrate_flow(spec: FieldSpec, cloud: ParticleCloud, t0: float, T: float, dt: float,
                   store_every: int = 1, box=None) -> ParticleFlow:
    """Classical RK4 with a fixed step; T < t0 integrates backward in time.

    Particles whose stages leave the evaluation box are frozen and flagged
    as escaped.
    """
    n, step = _steps(t0, T, dt)
    box = spec.box if box is None else box
    X = cloud.points.copy()
    esc = np.zeros(cloud.n, dtype=bool)

    def inside(P):
        if box is None:
            return np.all(np.isfinite(P), axis=1)
        lo, hi = np.asarray(box[0]), np.asarray(box[1])
        return np.all((P >= lo) & (P <= hi), axis=1)

    region = spec.region
    hint = region(X) if region is not None else None
    esc |= ~inside(X)
    times = [t0]
    store = [X.copy()]
    regions = [hint.copy()] if hint is not None else None
    for s in range(n):
        t = t0 + s * step
        live = ~esc
        P = X[live]
        hl = hint[live] if hint is not None else None
        k1 = spec.eval(t, P, hl)
        P2 = P + 0.5 * step * k1
        k2 = spec.eval(t + 0.5 * step, P2, hl)
        P3 = P + 0.5 * step * k2
        k3 = spec.eval(t + 0.5 * step, P3, hl)
        P4 = P + step * k3
        k4 = spec.eval(t + step, P4, hl)
        new = P + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ok = inside(P2) & inside(P3) & inside(P4) & inside(new)
        idx = np.flatnonzero(live)
        X[idx[ok]] = new[ok]
        esc[idx[~ok]] = True
        if hint is not None:
            hint = region(X)
        if (s + 1) % store_every == 0 or s + 1 == n:
            times.append(t0 + (s + 1) * step)
            store.append(X.copy())
            if regions is not None:
                regions.append(hint.copy())
    times_arr = np.asarray(times)
    times_arr[-1] = T
    return ParticleFlow(cloud, times_arr, np.asarray(store), esc,
                        None if regions is None else np.asarray(regions), "rk4", abs(step))


# ------------------------------------------------------------ diagnostics


def compressibility(flow: ParticleFlow, grid: ScalarGrid, time_indices=None) -> CompressibilityReport:
    """Empirical push-forward density (count * h_p^2 / cell area) on the cells of ``grid``."""
    if grid.dim != 2:
        raise ConfigurationError("planar cell grids only")
    edges = [grid.origin[i] + np.arange(grid.extents[i] + 1) * grid.h for i in range(2)]
    idx = range(len(flow.times)) if time_indices is None else time_indices
    valid = flow.valid
    dens = []
    for j in idx:
        P = flow.positions[j][valid]
        H, _, _ = np.histogram2d(P[:, 0], P[:, 1], bins=edges)
        dens.append(H * flow.cloud.cell_measure / grid.cell_volume)
    dens = np.asarray(dens)
    under = grid.cell_volume / flow.cloud.cell_measure < 4
    return CompressibilityReport(float(dens.max()), float(dens.min()), dens, bool(under),
                                 int(np.sum(~valid)))


def sublevel_GR(flow: ParticleFlow, R: float, r: Optional[float] = None):
    """Indicator of G_R = {x : |X(t,x)| <= R at all stored t} and the measure of B_r minus G_R."""
    radius = np.max(np.linalg.norm(flow.positions, axis=2), axis=0)
    inG = (radius <= R) & flow.valid
    dom = flow.cloud.in_ball(r) if r is not None else np.ones(flow.cloud.n, dtype=bool)
    return inG, float(np.sum(dom & ~inG)) * flow.cloud.cell_measure


def jacobian_track(spec: FieldSpec, flow: ParticleFlow, div_h: float = 1e-4) -> JacobianTrack:
    """JX from exp of the trapezoid integral of div B along trajectories, and
    det DX from central differences across neighboring lattice trajectories."""
    cloud = flow.cloud
    if cloud.shape is None:
        raise ConfigurationError("jacobian_track needs a lattice cloud")
    nt = len(flow.times)
    div = np.empty((nt, cloud.n))
    for j, t in enumerate(flow.times):
        P = flow.positions[j]
        div[j] = spec.div(t, P) if spec.div is not None else central_divergence(spec, t, P, div_h)
    dtau = np.diff(flow.times)[:, None]
    expo = np.concatenate([np.zeros((1, cloud.n)), np.cumsum(0.5 * dtau * (div[1:] + div[:-1]), 0)])
    jx = np.exp(expo)
    nx, ny = cloud.shape
    h = cloud.h
    Pg = flow.positions.reshape(nt, nx, ny, 2)
    esc = flow.escaped.reshape(nx, ny)
    fd = np.full((nt, nx, ny), np.nan)
    d1 = (Pg[:, 2:, 1:-1] - Pg[:, :-2, 1:-1]) / (2 * h)
    d2 = (Pg[:, 1:-1, 2:] - Pg[:, 1:-1, :-2]) / (2 * h)
    fd[:, 1:-1, 1:-1] = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    bad = esc.copy()
    bad[1:-1, 1:-1] |= esc[2:, 1:-1] | esc[:-2, 1:-1] | esc[1:-1, 2:] | esc[1:-1, :-2]
    fd[:, bad] = np.nan
    jx[:, flow.escaped] = np.nan
    return JacobianTrack(flow.times.copy(), jx, fd.reshape(nt, -1))


def semigroup_residual(spec: FieldSpec, cloud: ParticleCloud, s: float, t: float, dt: float) -> SemigroupResult:
    """max |X(t+s, x) - X(t, X(s, x))| with X(t, .) interpolated from the lattice."""
    if not spec.autonomous:
        raise ConfigurationError("semigroup residual needs an autonomous field")
    if cloud.shape is None:
        raise ConfigurationError("semigroup residual needs a lattice cloud")
    full = integrate_flow(spec, cloud, 0.0, s + t, dt)
    inner = integrate_flow(spec, cloud, 0.0, s, dt)
    outer = integrate_flow(spec, cloud, 0.0, t, dt)
    ax = cloud.axes()
    Y = inner.final
    ok = inner.valid & full.valid
    ok &= (Y[:, 0] >= ax[0][0]) & (Y[:, 0] <= ax[0][-1]) & (Y[:, 1] >= ax[1][0]) & (Y[:, 1] <= ax[1][-1])
    Xt = outer.final.reshape(*cloud.shape, 2)
    if np.any(outer.escaped):
        raise DomainError("lattice flow escaped the evaluation box")
    comp = np.stack([RegularGridInterpolator(ax, Xt[..., i])(Y[ok]) for i in range(2)], 1)
    res = np.linalg.norm(full.final[ok] - comp, axis=1)
    return SemigroupResult(float(res.max(initial=0.0)), int(ok.sum()), int((~ok).sum()))


# ------------------------------------------------------------ counterexample flows


def counterexample_positions(x0, t, rule: str = "A") -> np.ndarray:
    """Closed-form branch flow of the counterexample field at time t >= 0.

    Inner regions conserve k = x1/x2 and move x2^2 at rate -2 (upper) or +2
    (lower), so upper inner particles reach the origin at t* = x2(0)^2/2.
    Outer regions move with constant velocity and cross x2 = 0 transversally.
    After t*, rule A continues along the same line (x1/x2 = k); rule B
    mirrors it (x1/x2 = -k). Both maps preserve Lebesgue measure because
    (k, t*) are area coordinates on either side.

    ``t`` may be complex with a tiny imaginary part (complex-step
    derivatives); branch selection uses its real part.
    """
    if rule not in ("A", "B"):
        raise ConfigurationError("branch rule must be 'A' or 'B'")
    X = as_points(x0, 2)
    if np.any(X[:, 1] == 0):
        raise DomainError("particles on x2 = 0 are rejected")
    tc = complex(t) if np.iscomplexobj(t) else float(t)
    tr = float(np.real(tc))
    x1, x2 = X[:, 0].astype(complex if isinstance(tc, complex) else float), X[:, 1]
    reg = counterexample_region(X)
    out = np.empty(X.shape, dtype=np.result_type(x1, tc))
    s1 = np.where(X[:, 0] >= 0, 1.0, -1.0)
    kk = X[:, 0] / X[:, 1]

    m = reg == LOWER_OUTER
    out[m, 0] = x1[m] + s1[m] * tc
    out[m, 1] = x2[m] - tc

    m = reg == UPPER_OUTER
    before = m & (x2 > tr)
    out[before, 0] = x1[before] - s1[before] * tc
    out[before, 1] = x2[before] - tc
    after = m & ~before
    c = x1[after] - s1[after] * x2[after]
    tau = tc - x2[after]
    out[after, 0] = c + s1[after] * tau
    out[after, 1] = -tau

    m = reg == LOWER_INNER
    y = -np.sqrt(x2[m] ** 2 + 2 * tc)
    out[m, 0] = kk[m] * y
    out[m, 1] = y

    m = reg == UPPER_INNER
    tstar = 0.5 * x2 ** 2
    before = m & (tstar > tr)
    y = np.sqrt(x2[before] ** 2 - 2 * tc)
    out[before, 0] = kk[before] * y
    out[before, 1] = y
    after = m & ~before
    y = -np.sqrt(2 * (tc - tstar[after]))
    kout = kk[after] if rule == "A" else -kk[after]
    out[after, 0] = kout * y
    out[after, 1] = y
    return out


def counterexample_flows(cloud: ParticleCloud, T: float, branch_rule: str = "A",
                         n_times: int = 11) -> ParticleFlow:
    """Branch flow A or B of the counterexample field on ``cloud`` over [0, T]."""
    if np.any(cloud.points[:, 1] == 0):
        raise DomainError("cloud touches the singular line x2 = 0")
    times = np.linspace(0.0, T, n_times)
    pos = np.stack([counterexample_positions(cloud.points, t, branch_rule) for t in times])
    regions = np.stack([counterexample_region(P) for P in pos])
    return ParticleFlow(cloud, times, pos, np.zeros(cloud.n, dtype=bool), regions,
                        f"closed-form/{branch_rule}", 0.0, {"rule": branch_rule})


def counterexample_ode_residual(flow: ParticleFlow, min_distance: float = 1e-6,
                                step: float = 1e-20) -> float:
    """max |dX/dt - B(X)| over stored times, by complex-step differentiation
    of the closed forms, skipping points within ``min_distance`` of the
    singular set and collision instants."""
    rule = flow.meta.get("rule", "A")
    x0 = flow.cloud.points
    worst = 0.0
    for t in flow.times:
        if t <= 0:
            continue
        X = counterexample_positions(x0, t, rule)
        V = np.imag(counterexample_positions(x0, complex(t, step), rule)) / step
        dist = np.minimum(np.abs(X[:, 1]), np.abs(np.abs(X[:, 0]) - np.abs(X[:, 1])) / np.sqrt(2))
        ok = dist > min_distance
        if not np.any(ok):
            continue
        B = counterexample_field(X[ok])
        worst = max(worst, float(np.max(np.linalg.norm(V[ok] - B, axis=1))))
    return worst
