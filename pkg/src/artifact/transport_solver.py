"""Continuity equation  d_t u + div(B u) = G u + F  on planar grids.

The Lagrangian solver follows backward characteristics from every grid
node and evaluates the representation formula either with the exponent
of -(div B - G) or through the Jacobian JX. An upwind finite-volume
scheme serves as an independent Eulerian oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.integrate import cumulative_trapezoid

from .bv_fields import FieldSpec, central_divergence
from .core_model import ConfigurationError, DomainError, ScalarGrid
from .flow_engine import ParticleCloud, integrate_flow

__all__ = [
    "TransportProblem",
    "TransportSolution",
    "solve_lagrangian",
    "eulerian_upwind",
    "PolyBump",
    "default_test_functions",
    "renormalization_defect",
    "grid_to_csv",
]


def _zero(t, X):
    return np.zeros(len(X))


@dataclass(frozen=True)
class TransportProblem:
    """Data of the continuity equation on the lattice of ``u0``.

    ``u0_fn`` (optional) evaluates the initial datum exactly off the grid;
    otherwise cubic interpolation of the grid values is used.
    """

    u0: ScalarGrid
    field: FieldSpec
    T: float
    G: Callable = _zero
    F: Callable = _zero
    times: Optional[Sequence[float]] = None
    u0_fn: Optional[Callable] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.u0.values)):
            raise ConfigurationError("u0 must be finite")
        if self.u0.dim != 2:
            raise ConfigurationError("planar problems only")
        if not self.T > 0:
            raise ConfigurationError("horizon must be positive")

    def output_times(self) -> np.ndarray:
        return np.asarray([self.T] if self.times is None else self.times, dtype=float)

    def initial(self, X: np.ndarray) -> np.ndarray:
        if self.u0_fn is not None:
            return np.asarray(self.u0_fn(X), dtype=float)
        idx = ((X - self.u0.origin) / self.u0.h - 0.5).T
        return ndimage.map_coordinates(self.u0.values, idx, order=3, mode="constant", cval=0.0)

    def divergence(self, t: float, X: np.ndarray) -> np.ndarray:
        if self.field.div is not None:
            return np.asarray(self.field.div(t, X), dtype=float)
        return central_divergence(self.field, t, X)


@dataclass
class TransportSolution:
    times: np.ndarray
    grids: list
    flagged: list
    alt_grids: Optional[list] = None

    def at(self, t: float) -> ScalarGrid:
        j = int(np.argmin(np.abs(self.times - t)))
        return self.grids[j]


def _speed_bound(problem: TransportProblem) -> float:
    X = problem.u0.centers()
    return float(np.max(np.linalg.norm(problem.field.eval(0.0, X), axis=1), initial=0.0))


def solve_lagrangian(problem: TransportProblem, dt: Optional[float] = None) -> TransportSolution:
    """Representation formula along backward characteristics.

    ``grids`` holds the exponent form, ``alt_grids`` the Jacobian form;
    nodes whose characteristic leaves the field box are NaN and flagged.
    """
    g = problem.u0
    X = g.centers()
    if dt is None:
        vmax = _speed_bound(problem)
        dt = min(1e-3, g.h / vmax) if vmax > 0 else 1e-3
    cloud = ParticleCloud(X, g.h, g.extents)
    grids, alts, flags = [], [], []
    for t in problem.output_times():
        if t == 0:
            u = problem.initial(X)
            grids.append(g.with_values(u.reshape(g.extents)))
            alts.append(grids[-1])
            flags.append(np.zeros(g.extents, dtype=bool))
            continue
        back = integrate_flow(problem.field, cloud, t, 0.0, dt)
        tau = back.times[::-1]
        path = back.positions[::-1]  # path[k] = X(tau_k, xbar)
        nt = len(tau)
        div = np.empty((nt, len(X)))
        Gv = np.empty((nt, len(X)))
        Fv = np.empty((nt, len(X)))
        for k in range(nt):
            div[k] = problem.divergence(tau[k], path[k])
            Gv[k] = problem.G(tau[k], path[k])
            Fv[k] = problem.F(tau[k], path[k])
        u0 = problem.initial(path[0])
        A = cumulative_trapezoid(div - Gv, tau, axis=0, initial=0.0)
        u = u0 * np.exp(-A[-1]) + np.trapezoid(Fv * np.exp(-(A[-1] - A)), tau, axis=0)
        D = cumulative_trapezoid(div, tau, axis=0, initial=0.0)
        Gc = cumulative_trapezoid(Gv, tau, axis=0, initial=0.0)
        JX = np.exp(D)
        alt = (u0 * np.exp(Gc[-1]) + np.trapezoid(Fv * np.exp(Gc[-1] - Gc) * JX, tau, axis=0)) / JX[-1]
        bad = back.escaped
        u[bad] = np.nan
        alt[bad] = np.nan
        grids.append(g.with_values(u.reshape(g.extents)))
        alts.append(g.with_values(alt.reshape(g.extents)))
        flags.append(bad.reshape(g.extents))
    return TransportSolution(problem.output_times(), grids, flags, alts)


def eulerian_upwind(problem: TransportProblem, dt_cfl: float) -> TransportSolution:
    """First-order conservative upwind scheme on the periodic box of ``u0``.

    Face velocities are the normal components of B at face centers; sources
    are added by explicit Euler.
    """
    g = problem.u0
    h = g.h
    nx, ny = g.extents
    ax = g.axes()
    xf = g.origin[0] + np.arange(nx) * h + h  # right faces in x1
    yf = g.origin[1] + np.arange(ny) * h + h
    FX = np.stack(np.meshgrid(xf, ax[1], indexing="ij"), -1).reshape(-1, 2)
    FY = np.stack(np.meshgrid(ax[0], yf, indexing="ij"), -1).reshape(-1, 2)
    C = g.centers()
    times = problem.output_times()
    u = np.array(g.values, dtype=float)
    out = []
    t = 0.0
    for t_out in times:
        while t < t_out - 1e-12:
            step = min(dt_cfl, t_out - t)
            a = problem.field.eval(t, FX)[:, 0].reshape(nx, ny)
            b = problem.field.eval(t, FY)[:, 1].reshape(nx, ny)
            vmax = max(np.abs(a).max(), np.abs(b).max())
            if step * vmax / h > 0.5 + 1e-12:
                raise DomainError("CFL condition dt * max|B| / h <= 0.5 violated")
            fx = np.where(a > 0, a * u, a * np.roll(u, -1, 0))
            fy = np.where(b > 0, b * u, b * np.roll(u, -1, 1))
            flux = (fx - np.roll(fx, 1, 0) + fy - np.roll(fy, 1, 1)) / h
            src = problem.G(t, C).reshape(nx, ny) * u + problem.F(t, C).reshape(nx, ny)
            u = u + step * (src - flux)
            t += step
        out.append(g.with_values(u.copy()))
    return TransportSolution(times, out, [np.zeros(g.extents, dtype=bool) for _ in out])


# ------------------------------------------------------------ renormalization


@dataclass(frozen=True)
class PolyBump:
    """phi(t, x) = b(t; t0, t1) b(x1; a1, b1) b(x2; a2, b2) with b(s) = ((s-a)(b-s))^3 scaled."""

    t_range: tuple
    x_range: tuple
    y_range: tuple

    @staticmethod
    def _b(s, lo, hi):
        m = 0.5 * (hi - lo)
        z = (s - lo) * (hi - s) / (m * m)
        inside = (s > lo) & (s < hi)
        val = np.where(inside, z ** 3, 0.0)
        dz = (hi + lo - 2 * s) / (m * m)
        der = np.where(inside, 3 * z ** 2 * dz, 0.0)
        return val, der

    def eval(self, t, X):
        bt, dbt = self._b(np.asarray(t, float), *self.t_range)
        bx, dbx = self._b(X[..., 0], *self.x_range)
        by, dby = self._b(X[..., 1], *self.y_range)
        phi = bt * bx * by
        return phi, dbt * bx * by, np.stack([bt * dbx * by, bt * bx * dby], -1)


def default_test_functions(box, T: float) -> list:
    """Five fixed bumps on interior sub-boxes of box x (0, T)."""
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    L = hi - lo
    specs = [
        ((0.1, 0.9), (0.2, 0.8), (0.2, 0.8)),
        ((0.2, 0.8), (0.1, 0.5), (0.3, 0.9)),
        ((0.1, 0.6), (0.4, 0.9), (0.1, 0.6)),
        ((0.3, 0.95), (0.25, 0.6), (0.45, 0.85)),
        ((0.05, 0.7), (0.5, 0.85), (0.15, 0.55)),
    ]
    out = []
    for ts, xs, ys in specs:
        out.append(PolyBump((ts[0] * T, ts[1] * T),
                                (lo[0] + xs[0] * L[0], lo[0] + xs[1] * L[0]),
                                (lo[1] + ys[0] * L[1], lo[1] + ys[1] * L[1])))
    return out


def renormalization_defect(solution: TransportSolution, problem: TransportProblem,
                           beta: Callable, dbeta: Callable,
                           tests: Optional[Sequence[PolyBump]] = None) -> np.ndarray:
    """Weak residuals of the renormalized equation against each test function.

    R(phi) = int int [ -beta(u) d_t phi - beta(u) B . grad phi
                       + (div B (u beta'(u) - beta(u)) - G u beta'(u) - F beta'(u)) phi ]
    with trapezoid in time over the solution's times and midpoint sums in space.
    """
    g = problem.u0
    lo, hi = g.origin, g.upper()
    T = float(solution.times[-1])
    if tests is None:
        tests = default_test_functions((lo, hi), T)
    for tf in tests:
        if not (tf.t_range[0] > solution.times[0] and tf.t_range[1] < T):
            raise DomainError("test function support touches the time boundary")
        for (a, b), i in ((tf.x_range, 0), (tf.y_range, 1)):
            if not (a > lo[i] and b < hi[i]):
                raise DomainError("test function support touches the spatial boundary")
    X = g.centers()
    res = np.zeros((len(tests), len(solution.times)))
    for k, t in enumerate(solution.times):
        u = solution.grids[k].values.ravel()
        if np.any(~np.isfinite(u)):
            raise DomainError("solution has flagged nodes")
        bu, dbu = beta(u), dbeta(u)
        Bv = problem.field.eval(t, X)
        lower = problem.divergence(t, X) * (u * dbu - bu) - problem.G(t, X) * u * dbu - problem.F(t, X) * dbu
        for i, tf in enumerate(tests):
            phi, phit, gphi = tf.eval(t, X)
            dens = -bu * phit - bu * np.einsum("ij,ij->i", Bv, gphi) + lower * phi
            res[i, k] = np.sum(dens) * g.cell_volume
    return np.trapezoid(res, solution.times, axis=1)


def grid_to_csv(grid: ScalarGrid, path=None) -> str:
    C = grid.centers()
    v = grid.values.ravel()
    text = "x1,x2,u\n" + "".join(f"{a:.17g},{b:.17g},{c:.17g}\n" for (a, b), c in zip(C, v))
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def defect_json(beta_name: str, residuals) -> str:
    return json.dumps({"beta": beta_name, "residuals": [float(r) for r in residuals]})
