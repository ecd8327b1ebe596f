"""Rough convolution kernels and the singular operators built from them.

Kernels have the form K(x) = Omega(x/|x|) |x|^{-d} in the plane, with Omega
given by angular samples (and optionally an exact callable). Lattice
convolutions treat the kernel as a principal value: the cell at the origin is
dropped, and the square lattice symmetry cancels the mean-zero part exactly.

Also here: the cone bump functions and the two-point difference
representation of a function through its gradient, built from explicit
cutoffs rho and psi.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, ndimage, signal, special

from .core_model import (
    ConfigurationError,
    DirectionFn,
    DiscreteMeasure,
    DomainError,
    ScalarGrid,
    as_points,
)

log = logging.getLogger(__name__)

__all__ = [
    "DirectionFn",
    "RoughKernel",
    "BumpPair",
    "smoothstep",
    "make_kernel",
    "riesz_squared_kernel",
    "unnormalized_riesz_kernel",
    "sphere_seminorm",
    "cancellation_sup",
    "smooth_direction",
    "truncated_convolution",
    "maximal_truncated",
    "composite_sup_op",
    "cone_bump",
    "kakeya_singular",
    "build_bump_pair",
    "difference_representation",
    "bump_integrals",
    "chi_cutoff",
    "default_annuli",
]

_DIRECT_LIMIT = 128 * 128


def smoothstep(t):
    """Quintic C^2 step: 0 for t <= 0, 1 for t >= 1, S(t) + S(1 - t) = 1."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


# ---------------------------------------------------------------- kernels


@dataclass(frozen=True)
class RoughKernel:
    """K(x) = Omega(x/|x|) * radial(|x|), radial defaulting to |x|^{-d}."""

    omega: DirectionFn
    alpha0: float = 0.5
    radial: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact: Optional[Callable[[np.ndarray], np.ndarray]] = None
    c1: float = float("nan")
    c2: float = float("nan")
    name: str = "table"

    def omega_at(self, u: np.ndarray) -> np.ndarray:
        """Omega at unit vectors u (..., 2)."""
        if self.exact is not None:
            return self.exact(u)
        return self.omega.at_vectors(u)

    def radial_at(self, r):
        r = np.asarray(r, dtype=float)
        return r ** -2.0 if self.radial is None else self.radial(r)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            u = x / r[..., None]
            val = self.omega_at(u) * self.radial_at(r)
        return np.where(r > 0, val, 0.0)


def make_kernel(omega: DirectionFn, alpha0: float = 0.5, exact=None, radial=None,
                name: str = "table", check: bool = True, tol: float = 1e-8) -> RoughKernel:
    """Build a kernel and record its admissibility numbers c1 (seminorm), c2 (cancellation)."""
    k = RoughKernel(omega, alpha0, radial, exact, name=name)
    c1 = sphere_seminorm(omega, alpha0)
    annuli = default_annuli()
    c2 = cancellation_sup(k, annuli)
    if check and radial is None and c2 > tol * max(1.0, c1):
        raise DomainError(f"kernel fails the cancellation condition (sup = {c2:.3g})")
    return RoughKernel(omega, alpha0, radial, exact, c1, c2, name)


def default_annuli(n: int = 20) -> list:
    radii = 2.0 ** np.linspace(-6, 4, n + 1)
    return list(zip(radii[:-1], radii[1:]))


def riesz_squared_kernel(j: int = 1, n: int = 512, alpha0: float = 0.5) -> RoughKernel:
    """K_j(x) = (|x|^2 - 2 x_j^2) / (2 pi |x|^4), the kernel of R_j^2 - (1/2) Id.

    Its Fourier multiplier is xi_j^2/|xi|^2 - 1/2.
    """
    if j not in (1, 2):
        raise ConfigurationError("j must be 1 or 2 in the plane")

    def exact(u):
        uj = u[..., j - 1]
        return (1.0 - 2.0 * uj * uj) / (2 * np.pi)

    omega = DirectionFn.from_function(lambda th: exact(np.stack([np.cos(th), np.sin(th)], -1)), n)
    return make_kernel(omega, alpha0, exact=exact, name=f"riesz_sq_{j}")


def unnormalized_riesz_kernel(j: int = 1, n: int = 512, alpha0: float = 0.5) -> RoughKernel:
    """K_j(x) = (|x|^2 - d x_j^2) / |x|^{d+2} with d = 2 (no normalization)."""
    def exact(u):
        uj = u[..., j - 1]
        return 1.0 - 2.0 * uj * uj

    omega = DirectionFn.from_function(lambda th: exact(np.stack([np.cos(th), np.sin(th)], -1)), n)
    return make_kernel(omega, alpha0, exact=exact, name=f"riesz_sq_raw_{j}")


# ------------------------------------------------------ admissibility numbers


def _radial_pair_integral(psi: np.ndarray, alpha0: float) -> np.ndarray:
    """K(psi) = int_1^2 int_1^2 r s (r^2 + s^2 - 2 r s cos psi)^{-(2+alpha0)/2} ds dr.

    The inner integral is closed form (incomplete beta); the outer one uses
    composite Gauss-Legendre panels graded toward r = 1 and r = 2, where the
    inner integrand sharpens at scale r sin(psi).
    """
    p = 1.0 + alpha0 / 2.0
    a_beta, b_beta = 0.5, p - 0.5
    bfull = special.beta(a_beta, b_beta)
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    gl_x, gl_w = np.polynomial.legendre.leggauss(16)

    def inner(r, cs, b):
        def prim(s):
            u = s - r * cs
            q = u * u + b * b
            t1 = q ** (1 - p) / (2 * (1 - p))
            frac = special.betainc(a_beta, b_beta, u * u / q)
            t2 = r * cs * np.sign(u) * 0.5 * bfull * frac * b ** (1 - 2 * p)
            return t1 + t2

        return prim(2.0) - prim(1.0)

    out = np.empty(psi.size)
    for i, ps in enumerate(psi):
        cs, sn = math.cos(ps), abs(math.sin(ps))
        scale = max(sn, 1e-12)
        # graded breakpoints near both ends
        g = scale * 2.0 ** np.arange(-4, 40)
        g = g[g < 0.5]
        left = np.concatenate([[0.0], g, [0.5]])
        br = np.unique(np.concatenate([1 + left, 2 - left]))
        lo, hi = br[:-1], br[1:]
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        r = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
        w = (half[:, None] * gl_w[None, :]).ravel()
        b = r * sn
        out[i] = np.sum(w * r * inner(r, cs, np.maximum(b, 1e-300)))
    return out


def sphere_seminorm(omega: DirectionFn, alpha0: float) -> float:
    """W^{alpha0,1} norm of the degree-zero extension of Omega on the annulus 1 < |x| < 2.

    L^1 part plus the Gagliardo double integral, reduced to angular lags with
    an exactly integrated radial weight.
    """
    if not (0 < alpha0 < 1):
        raise DomainError("alpha0 must lie in (0, 1)")
    s = omega.samples
    n = s.size
    dth = 2 * np.pi / n
    l1 = 1.5 * np.abs(s).sum() * dth
    if np.ptp(s) == 0:
        return float(l1)
    # D_k = int |Omega(t) - Omega(t + k dth)| dt at lags k = 0..n/2, D_0 = 0;
    # D is interpolated linearly between lags and integrated against the
    # radial weight exactly on each lag interval (product integration)
    half = n // 2
    D = np.array([np.abs(s - np.roll(s, -k)).sum() * dth for k in range(half + 1)])
    gl_x, gl_w = np.polynomial.legendre.leggauss(8)
    lo = np.arange(1, half) * dth
    nodes = (lo[:, None] + 0.5 * dth * (1 + gl_x[None, :])).ravel()
    kv = _radial_pair_integral(nodes, alpha0).reshape(lo.size, -1)
    frac = 0.5 * (1 + gl_x)[None, :]
    i0 = (kv * gl_w).sum(axis=1) * 0.5 * dth
    i1 = (kv * frac * gl_w).sum(axis=1) * 0.5 * dth
    gag = np.sum(D[1:half] * (i0 - i1) + D[2 : half + 1] * i1)
    # first interval: the weight is singular like t^{-1-alpha0}, D vanishes linearly
    first = integrate.quad(lambda t: t * _radial_pair_integral(t, alpha0)[0], 0, dth, limit=200)[0] / dth
    gag += D[1] * first
    gag *= 2.0  # lags in (-pi, 0)
    return float(l1 + gag)


def cancellation_sup(kernel: RoughKernel, annuli: Sequence) -> float:
    """max over annuli of |int_{R1<|x|<R2} K| by polar quadrature on Omega's angular grid."""
    ang = kernel.omega.angles
    u = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    ang_int = float(np.sum(kernel.omega_at(u)) * 2 * np.pi / ang.size)
    best = 0.0
    for r1, r2 in annuli:
        if not (0 < r1 < r2):
            raise DomainError("annuli need 0 < R1 < R2")
        if kernel.radial is None:
            rad = math.log(r2 / r1)
        else:
            rad = integrate.quad(lambda r: float(kernel.radial_at(r)) * r, r1, r2, limit=200)[0]
        best = max(best, abs(ang_int * rad))
    return best


def smooth_direction(omega: DirectionFn, n: int) -> DirectionFn:
    """Periodic mollification of the angular samples at scale 1/n."""
    if n < 1:
        raise DomainError("smoothing index must be >= 1")
    s = omega.samples
    N = s.size
    dth = 2 * np.pi / N
    width = 1.0 / n
    half = int(math.floor(width / dth))
    if half < 1:
        return DirectionFn(s.copy())
    t = np.arange(-half, half + 1) * dth / width
    ker = np.exp(-1.0 / np.clip(1 - t * t, 1e-300, None))
    ker[np.abs(t) >= 1] = 0.0
    ker /= ker.sum()
    full = np.zeros(N)
    full[np.arange(-half, half + 1) % N] += ker
    out = np.real(np.fft.ifft(np.fft.fft(s) * np.fft.fft(full)))
    drift = out.mean() - s.mean()
    if abs(drift) > 1e-14:
        log.info("smooth_direction: removing mean drift %.3e", drift)
        out -= drift
    return DirectionFn(out)


# ------------------------------------------------- truncated singular integrals


def _lattice_kernel(kernel: RoughKernel, h: float, shape: tuple, eps: float,
                    cutoff: Optional[Callable] = None) -> np.ndarray:
    """Kernel samples on a centered lattice (2*shape - 1) with truncation |x| > eps."""
    nx, ny = shape
    ix = np.arange(-(nx - 1), nx) * h
    iy = np.arange(-(ny - 1), ny) * h
    X, Y = np.meshgrid(ix, iy, indexing="ij")
    r = np.hypot(X, Y)
    K = kernel(np.stack([X, Y], -1))
    if cutoff is None:
        K = np.where(r > eps, K, 0.0)
    else:
        K = K * cutoff(r / eps)
    K[nx - 1, ny - 1] = 0.0
    return K


def truncated_convolution(kernel: RoughKernel, data, eps_trunc: float, eval_points=None,
                          cutoff: Optional[Callable] = None, method: str = "auto"):
    """(1_{|.|>eps} K) * data.

    ``data`` is a DiscreteMeasure (atoms plus optional density) or a
    ScalarGrid density. With a grid and no eval points the result is a
    ScalarGrid on the same lattice, computed by direct summation for small
    grids and by FFT otherwise. ``cutoff`` replaces the sharp truncation by
    K(x) * cutoff(|x|/eps).
    """
    if not eps_trunc > 0:
        raise DomainError("truncation radius must be positive")
    if isinstance(data, ScalarGrid):
        if data.dim != 2:
            raise ConfigurationError("planar grids only")
        if eval_points is None:
            return data.with_values(_grid_conv(kernel, data, eps_trunc, cutoff, method))
        data = DiscreteMeasure(np.zeros((0, 2)), [], data, 2)
    x = as_points(eval_points, 2)
    pts, w = data.as_atoms()
    out = np.zeros(x.shape[0])
    if pts.shape[0] == 0:
        return out
    step = max(1, 2_000_000 // pts.shape[0])
    for s in range(0, x.shape[0], step):
        diff = x[s : s + step, None, :] - pts[None, :, :]
        r = np.hypot(diff[..., 0], diff[..., 1])
        K = kernel(diff)
        K = np.where(r > eps_trunc, K, 0.0) if cutoff is None else K * cutoff(r / eps_trunc)
        out[s : s + step] = K @ w
    return out


def _grid_conv(kernel, grid: ScalarGrid, eps, cutoff, method):
    f = grid.values
    Kl = _lattice_kernel(kernel, grid.h, f.shape, eps, cutoff) * grid.cell_volume
    if method == "auto":
        method = "direct" if f.size < _DIRECT_LIMIT else "fft"
    if method == "fft":
        full = signal.fftconvolve(f, Kl, mode="full")
    elif method == "direct":
        full = signal.convolve(f, Kl, mode="full", method="direct")
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    nx, ny = f.shape
    return full[nx - 1 : 2 * nx - 1, ny - 1 : 2 * ny - 1]


def chi_cutoff(t):
    """Smooth radial cutoff: 0 for t <= 2, 1 for t >= 3."""
    return smoothstep(np.asarray(t, dtype=float) - 2.0)


def maximal_truncated(kernel: RoughKernel, data, eval_points, eps_grid: Sequence[float],
                      smooth: bool = False) -> np.ndarray:
    """sup over eps_grid of |truncated convolution|; smooth=True uses chi(|x|/eps) K instead."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    if eps_grid.size == 0:
        raise ConfigurationError("empty truncation grid")
    cut = chi_cutoff if smooth else None
    best = None
    for e in eps_grid:
        v = truncated_convolution(kernel, data, e, eval_points, cutoff=cut)
        v = np.abs(v.values if isinstance(v, ScalarGrid) else v)
        best = v if best is None else np.maximum(best, v)
    if isinstance(data, ScalarGrid) and eval_points is None:
        return data.with_values(best)
    return best


# ------------------------------------------------------------ composite operator


def _power_weight_lattice(h: float, half: int, alpha: float) -> np.ndarray:
    """|y|^{alpha-2} on a centered lattice; the origin cell gets its cell average."""
    ax = np.arange(-half, half + 1) * h
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    r = np.hypot(X, Y)
    with np.errstate(divide="ignore"):
        w = r ** (alpha - 2.0)
    # equal-area disc: (1/h^2) int_{|y| < h/sqrt(pi)} |y|^{alpha-2} dy
    w[half, half] = 2 * np.pi * (h / math.sqrt(math.pi)) ** alpha / alpha / (h * h)
    return w, X, Y


def composite_sup_op(kernel: RoughKernel, bumps: Sequence[Callable], alpha: float,
                     rhos: Sequence[float], f: ScalarGrid, eps_trunc: Optional[float] = None) -> ScalarGrid:
    """sup over (bump, rho) of |(rho^{-alpha} |.|^{alpha-2} phi(./rho)) * K * f| on f's lattice.

    ``bumps`` is the family phi^eps (callables on (..., 2) arrays, supported in
    the unit ball). K * f is computed once; each mollification is an FFT
    convolution.
    """
    if not (0 < alpha < 2):
        raise DomainError("alpha must lie in (0, d)")
    if f.dim != 2:
        raise ConfigurationError("planar grids only")
    h = f.h
    g = truncated_convolution(kernel, f, eps_trunc or h / 2).values
    best = np.zeros_like(g)
    for rho in rhos:
        half = int(math.ceil(rho / h))
        w, X, Y = _power_weight_lattice(h, half, alpha)
        for phi in bumps:
            ph = phi(np.stack([X, Y], -1) / rho)
            ker = rho ** (-alpha) * w * ph * h * h
            best = np.maximum(best, np.abs(signal.fftconvolve(g, ker, mode="same")))
    return f.with_values(best)


# -------------------------------------------------------- Kakeya singular operator


def cone_bump(e_angle: float, eps: float) -> Callable:
    """phi^{e,eps}(y) = S(2 - 2|y|) * S(2 - 2|y/|y| - e|/eps): supported in B_1 and the eps-cone."""
    e = np.array([math.cos(e_angle), math.sin(e_angle)])

    def phi(y):
        y = np.asarray(y, dtype=float)
        r = np.hypot(y[..., 0], y[..., 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            chord = np.linalg.norm(y / r[..., None] - e, axis=-1)
        val = smoothstep(2 - 2 * r) * smoothstep(2 - 2 * chord / eps)
        return np.where(r > 0, val, 0.0)

    return phi


def _angular_modes(kernel: RoughKernel, tol: float = 1e-12):
    """Fourier modes (m, a_m, b_m) of Omega: Omega(t) = sum a_m cos(m t) + b_m sin(m t)."""
    s = kernel.omega.samples
    n = s.size
    if kernel.exact is not None:
        th = kernel.omega.angles
        s = kernel.exact(np.stack([np.cos(th), np.sin(th)], -1))
    c = np.fft.rfft(s) / n
    scale = np.abs(c).max()
    if abs(c[0].real) > 1e-10 * max(scale, 1e-300):
        raise DomainError("kernel angular part must have zero mean")
    modes = []
    for m in range(1, c.size):
        if abs(c[m]) <= tol * scale:
            continue
        fac = 1.0 if (n % 2 == 0 and m == n // 2) else 2.0
        modes.append((m, fac * c[m].real, -fac * c[m].imag))
    return modes


@dataclass
class _ConeProfile:
    """Phi_m = K_m * (|.|^{alpha-2} phi^{e1,eps}) on a lattice, per angular harmonic."""

    h: float
    half: int
    tables: dict


def _cone_profiles(kernel, eps, alpha, L, h, bump_factory):
    half = int(round(L / h))
    ax = np.arange(-half, half + 1) * h
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    w, _, _ = _power_weight_lattice(h, half, alpha)
    g = w * bump_factory(0.0, eps)(np.stack([X, Y], -1)) * h * h
    r = np.hypot(X, Y)
    th = np.arctan2(Y, X)
    tables = {}
    if kernel is None:
        tables[(0, "id")] = g / (h * h)
        return _ConeProfile(h, half, tables)
    for m, _, _ in _angular_modes(kernel):
        with np.errstate(divide="ignore"):
            rad = np.where(r > 0, r ** -2.0, 0.0)
        for kind, fn in (("c", np.cos), ("s", np.sin)):
            Km = fn(m * th) * rad
            tables[(m, kind)] = signal.fftconvolve(g, Km, mode="same")
    return _ConeProfile(h, half, tables)


def kakeya_singular(kernel: RoughKernel, eps: float, alpha: float, rho0: float, mu: DiscreteMeasure,
                    eval_points, n_rho: int = 8, rho_min: Optional[float] = None,
                    directions: Optional[int] = None, bump_factory: Callable = cone_bump,
                    lattice_h: Optional[float] = None, eps_max: float = 0.5) -> np.ndarray:
    """T_eps(mu)(x) = sup_{rho < rho0, e} eps^{1-d} rho^{-alpha} |(|.|^{alpha-d} phi_rho^{e,eps}) * K * mu (x)|.

    Homogeneity reduces every (rho, e) to one lattice profile per angular
    harmonic of Omega: with Phi_e = K * (|.|^{alpha-2} phi^{e,eps}) one has
    value = eps^{-1} rho^{-2} |sum_z w_z Phi_e((x - z)/rho)|, and rotating e
    mixes the cos/sin harmonic profiles. ``kernel=None`` stands for the
    identity kernel (K = delta_0), for comparison with the Kakeya maximal
    function.
    """
    if not (0 < eps <= eps_max):
        raise DomainError(f"eps must lie in (0, {eps_max}]")
    if not (0 < alpha < 2):
        raise DomainError("alpha must lie in (0, d)")
    x = as_points(eval_points, 2)
    pts, wts = mu.as_atoms()
    out = np.zeros(x.shape[0])
    if pts.shape[0] == 0 or not np.any(wts):
        return out
    D = directions or max(64, math.ceil(2 * math.pi / eps) * 4)
    rmin = rho_min or rho0 / 2 ** (n_rho / 8)
    rhos = 2.0 ** (np.arange(math.ceil(8 * math.log2(rmin) - 1e-9), math.floor(8 * math.log2(rho0) + 1e-9) + 1) / 8)
    rhos = rhos[rhos < rho0 * (1 + 1e-12)]
    diff = x[:, None, :] - pts[None, :, :]
    dmax = np.hypot(diff[..., 0], diff[..., 1]).max()
    L = 1.25 * max(1.0, dmax / rhos.min())
    h = lattice_h or min(eps / 6, L / 64)
    prof = _cone_profiles(kernel, eps, alpha, L, h, bump_factory)
    modes = [(0, 1.0, 0.0)] if kernel is None else _angular_modes(kernel)
    gam = 2 * np.pi * np.arange(D) / D
    for rho in rhos:
        v = diff / rho  # (m, n, 2)
        for g_ in gam:
            cg, sg = math.cos(g_), math.sin(g_)
            # Phi_e(v) = Phi_{e1, rotated kernel}(R_{-g} v)
            vr = np.stack([cg * v[..., 0] + sg * v[..., 1], -sg * v[..., 0] + cg * v[..., 1]], -1)
            idx = (vr / prof.h + prof.half).reshape(-1, 2).T
            acc = np.zeros(vr.shape[:2])
            for m, a, b in modes:
                ca, sa = math.cos(m * g_), math.sin(m * g_)
                coef_c = a * ca + b * sa
                coef_s = -a * sa + b * ca
                pairs = (("id", 1.0),) if kernel is None else (("c", coef_c), ("s", coef_s))
                for kind, coef in pairs:
                    if coef == 0.0:
                        continue
                    vals = ndimage.map_coordinates(prof.tables[(m, kind)], idx, order=1, mode="constant")
                    acc += coef * vals.reshape(vr.shape[:2])
            val = np.abs(acc @ wts) / (eps * rho * rho)
            out = np.maximum(out, val)
    return out


# ------------------------------------------------- bumps and difference formula


def _rho_cut(t):
    """1 on [0, 1/4], 0 on [3/4, inf) and for t < 0, rho(t) + rho(1 - t) = 1."""
    t = np.asarray(t, dtype=float)
    return np.where(t < 0, 0.0, 1.0 - smoothstep((t - 0.25) / 0.5))


def _psi_raw(t, eps0: float = 0.5):
    return 1.0 - smoothstep((np.asarray(t, dtype=float) - eps0) / (1.0 - eps0))


def psi_normalization(d: int = 2, eps0: float = 0.5) -> float:
    """Constant kappa with int_{R^{d-1}} kappa psi_raw(|h|) dh = 1."""
    sphere = 2 * math.pi ** ((d - 1) / 2) / math.gamma((d - 1) / 2)
    mass = integrate.quad(lambda s: float(_psi_raw(s, eps0)) * s ** (d - 2), 0, 1, points=[eps0])[0]
    return 1.0 / (sphere * mass)


@dataclass(frozen=True)
class BumpPair:
    """Theta_1^{eps,e} (scalar) and Theta_2^{eps,e} (vector) for a unit vector e in the plane."""

    eps: float
    e: np.ndarray
    eps0: float = 0.5
    kappa: float = field(default=float("nan"))

    def __post_init__(self):
        e = np.asarray(self.e, dtype=float)
        e = e / np.linalg.norm(e)
        object.__setattr__(self, "e", e)
        if math.isnan(self.kappa):
            object.__setattr__(self, "kappa", psi_normalization(2, self.eps0))

    def phi(self, a: np.ndarray, c: np.ndarray):
        """(phi_1, phi_2) at direction a (..., 2) and radius c (...,) with b = e."""
        d = 2
        b = self.e
        ab = a @ b
        t = ab * c
        w = a - ab[..., None] * b
        wn = np.linalg.norm(w, axis=-1)
        ok = (ab > 0) & (t < 0.75)
        abs_ = np.where(ok, ab, 1.0)
        om = np.where(ok, 1.0 - t, 1.0)
        core = np.where(ok, _rho_cut(t) * self.kappa * _psi_raw(2 * wn / (self.eps * abs_ * om), self.eps0), 0.0)
        p1 = 2 ** (d - 1) * core / (abs_ ** d * om ** (d - 1))
        tail = 2 ** (d - 1) * core / (abs_ ** (d - 1) * om ** d)
        p2 = p1[..., None] * (a - b) / self.eps - (tail * c)[..., None] * w / self.eps
        return p1, p2

    def theta(self, z):
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = z / r[..., None]
        a = np.where(r[..., None] > 0, a, self.e)
        p1, p2 = self.phi(a, r)
        zero = r == 0
        return np.where(zero, 0.0, p1), np.where(zero[..., None], 0.0, p2)

    def theta1(self, z):
        return self.theta(z)[0]

    def theta2(self, z):
        return self.theta(z)[1]

    @property
    def half_angle(self) -> float:
        """Angular half-width of the support around e."""
        return math.asin(min(1.0, self.eps / 2))


def build_bump_pair(eps1: float, e, eps0: float = 0.5) -> BumpPair:
    if not (0 < eps1 < 0.01):
        raise DomainError("eps1 must lie in (0, 1/100)")
    return BumpPair(eps1, np.asarray(e, dtype=float), eps0)


def bump_integrals(bp: BumpPair, n_ang: int = 256, n_rad: int = 256) -> tuple:
    """(eps^{-1} int Theta_1, eps^{-1} int |Theta_2|) by polar midpoint quadrature."""
    th0 = math.atan2(bp.e[1], bp.e[0])
    tm = bp.half_angle
    th = th0 + (np.arange(n_ang) + 0.5) / n_ang * 2 * tm - tm
    a = np.stack([np.cos(th), np.sin(th)], -1)
    r = (np.arange(n_rad) + 0.5) / n_rad * 0.75 * 2  # covers c < 3/(4 a.b)
    A = np.broadcast_to(a[:, None, :], (n_ang, n_rad, 2))
    C = np.broadcast_to(r[None, :], (n_ang, n_rad))
    p1, p2 = bp.phi(A, C)
    jac = C * (2 * tm / n_ang) * (1.5 / n_rad)
    return float((p1 * jac).sum() / bp.eps), float((np.linalg.norm(p2, axis=-1) * jac).sum() / bp.eps)


def difference_representation(grad_f: Callable[[np.ndarray], np.ndarray], x, y, eps1: float = 1 / 128,
                              n_ang: int = 512, n_rad: Optional[int] = None, eps0: float = 0.5) -> float:
    """Reconstruct f(x) - f(y) from Df = grad f dx with the cone bumps Theta_1, Theta_2.

    f(x) - f(y) = sum over p in {x, y} (sign +1 for x, -1 for y) of
        int |p - z|^{1-d} [eps^{1-d} Theta_1^{e_p}((p-z)/|x-y|) e_p + eps^{2-d} Theta_2^{e_p}((p-z)/|x-y|)] . grad f(z) dz
    with e_x = -e_y = (x - y)/|x - y|. In polar coordinates around p the
    weight |p - z|^{1-d} cancels the Jacobian, leaving smooth integrands
    that are integrated by the midpoint rule on the cone support.
    """
    x = np.asarray(x, dtype=float).reshape(2)
    y = np.asarray(y, dtype=float).reshape(2)
    L = float(np.linalg.norm(x - y))
    if L == 0:
        raise DomainError("x and y must differ")
    if not (0 < eps1 < 0.01):
        raise DomainError("eps1 must lie in (0, 1/100)")
    n_rad = n_rad or n_ang
    e1 = (x - y) / L
    total = 0.0
    for p, e, sign in ((x, e1, 1.0), (y, -e1, -1.0)):
        bp = BumpPair(eps1, e, eps0)
        th0 = math.atan2(e[1], e[0])
        tm = bp.half_angle
        th = th0 - tm + (np.arange(n_ang) + 0.5) * (2 * tm / n_ang)
        a = np.stack([np.cos(th), np.sin(th)], -1)
        # radial support c < 3 / (4 a.b); a.b >= cos(tm)
        cmax = 0.75 / math.cos(tm)
        c = (np.arange(n_rad) + 0.5) * (cmax / n_rad)
        A = np.broadcast_to(a[:, None, :], (n_ang, n_rad, 2))
        C = np.broadcast_to(c[None, :], (n_ang, n_rad))
        p1, p2 = bp.phi(A, C)
        vec = p1[..., None] * e / eps1 + p2  # d = 2: eps^{-1} and eps^0 prefactors
        z = p[None, None, :] - (L * C)[..., None] * A
        g = np.asarray(grad_f(z.reshape(-1, 2)), dtype=float).reshape(n_ang, n_rad, 2)
        integrand = np.sum(vec * g, axis=-1)
        total += sign * integrand.sum() * (2 * tm / n_ang) * (L * cmax / n_rad)
    return float(total)
