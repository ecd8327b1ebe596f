"""Planar vector fields: smooth references, BV jump fields, convolution
fields K * b, the DiPerna-Lions type counterexample, and mollification.

Every field is a :class:`FieldSpec` whose ``eval`` takes a time and an
(n, 2) array of points and returns an (n, 2) array of velocities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage, signal

from .core_model import ConfigurationError, DomainError, Point, ScalarGrid, as_points
from .singular_ops import RoughKernel, riesz_squared_kernel, truncated_convolution

__all__ = [
    "SingularSetError",
    "JumpStructure",
    "FieldSpec",
    "GrowthSplit",
    "analytic_field",
    "zero_field",
    "constant_field",
    "rotation_field",
    "linear_field",
    "sine_field",
    "shear_field",
    "counterexample_field",
    "counterexample_region",
    "counterexample_spec",
    "convolution_field",
    "riesz_identity_field",
    "mollify",
    "divergence",
    "growth_split",
    "field_from_config",
    "UPPER_INNER",
    "UPPER_OUTER",
    "LOWER_INNER",
    "LOWER_OUTER",
]

SINGULAR_TOL = 1e-12

# region codes for the counterexample; inner means |x1| <= |x2|
UPPER_INNER, UPPER_OUTER, LOWER_INNER, LOWER_OUTER = 0, 1, 2, 3


class SingularSetError(DomainError):
    """Field evaluated on its singular set without a usable region hint."""


@dataclass(frozen=True)
class JumpStructure:
    """Jump set samples with value-jump direction xi, normal eta and |D^s B| density."""

    curve: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    magnitude: np.ndarray

    def __post_init__(self):
        c = as_points(self.curve, 2)
        xi = np.broadcast_to(np.asarray(self.xi, dtype=float), c.shape).copy()
        eta = np.broadcast_to(np.asarray(self.eta, dtype=float), c.shape).copy()
        mag = np.broadcast_to(np.asarray(self.magnitude, dtype=float), c.shape[:1]).copy()
        for name, v in (("xi", xi), ("eta", eta)):
            if not np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12):
                raise ConfigurationError(f"{name} must be a unit vector field")
        if np.any(mag < 0):
            raise ConfigurationError("jump magnitude must be nonnegative")
        for name, v in (("curve", c), ("xi", xi), ("eta", eta), ("magnitude", mag)):
            object.__setattr__(self, name, v)

    def orthogonality_defect(self) -> float:
        """max |<xi, eta>| over the samples (zero for divergence-free jumps)."""
        return float(np.max(np.abs(np.einsum("ij,ij->i", self.xi, self.eta)), initial=0.0))


@dataclass(frozen=True)
class FieldSpec:
    """A time-dependent planar vector field B(t, x).

    ``fn(t, X, hint)`` is vectorized over points; ``div(t, X)`` is the
    analytic divergence when known. ``eta`` gives a unit normal field used
    by the anisotropic functionals. ``box`` is the declared evaluation box.
    """

    kind: str
    fn: Callable
    div: Optional[Callable] = None
    jump: Optional[JumpStructure] = None
    box: Optional[tuple] = None
    autonomous: bool = True
    singular_distance: Optional[Callable] = None
    region: Optional[Callable] = None
    eta: Optional[Callable] = None
    grid_h: Optional[float] = None
    params: dict = field(default_factory=dict)

    def eval(self, t: float, x, hint=None) -> np.ndarray:
        single = isinstance(x, Point) or np.ndim(x) == 1
        pts = as_points(x.coords if isinstance(x, Point) else x, 2)
        out = np.asarray(self.fn(float(t), pts, hint), dtype=float).reshape(pts.shape)
        return out[0] if single else out

    __call__ = eval

    def in_box(self, pts: np.ndarray) -> np.ndarray:
        if self.box is None:
            return np.ones(len(pts), dtype=bool)
        lo, hi = self.box
        return np.all((pts >= np.asarray(lo)) & (pts <= np.asarray(hi)), axis=1)


@dataclass(frozen=True)
class GrowthSplit:
    """Norms of a split B/(1+|x|) = B1 + B2 with B1 in L1(L1) and B2 in L1(Linf)."""

    l1_part: float
    linf_part: float
    threshold: float

    def __post_init__(self):
        if not (np.isfinite(self.l1_part) and np.isfinite(self.linf_part)):
            raise DomainError("growth split norms must be finite")


# ------------------------------------------------------------ simple fields


def analytic_field(fn: Callable, div: Optional[Callable] = None, kind: str = "analytic",
                   box=None, autonomous: bool = True, eta=None, **params) -> FieldSpec:
    """Wrap ``fn(t, X) -> (n, 2)`` (and optionally ``div(t, X) -> (n,)``)."""
    return FieldSpec(kind, lambda t, X, hint=None: fn(t, X), div=div, box=box,
                     autonomous=autonomous, eta=eta, params=dict(params))


def zero_field(box=None) -> FieldSpec:
    return analytic_field(lambda t, X: np.zeros_like(X), lambda t, X: np.zeros(len(X)),
                          kind="zero", box=box)


def constant_field(c, box=None) -> FieldSpec:
    c = np.asarray(c, dtype=float)
    return analytic_field(lambda t, X: np.broadcast_to(c, X.shape).copy(),
                          lambda t, X: np.zeros(len(X)), kind="constant", box=box, c=c.tolist())


def rotation_field(box=None) -> FieldSpec:
    """B(x) = (-x2, x1)."""
    return analytic_field(lambda t, X: np.stack([-X[:, 1], X[:, 0]], 1),
                          lambda t, X: np.zeros(len(X)), kind="rotation", box=box)


def linear_field(box=None) -> FieldSpec:
    """B(x) = x, divergence 2."""
    return analytic_field(lambda t, X: X.copy(), lambda t, X: np.full(len(X), 2.0),
                          kind="linear", box=box)


def sine_field(box=None) -> FieldSpec:
    """B(x) = (sin x1, 0), divergence cos x1."""
    return analytic_field(lambda t, X: np.stack([np.sin(X[:, 0]), np.zeros(len(X))], 1),
                          lambda t, X: np.cos(X[:, 0]), kind="sine", box=box)


def shear_field(box=((-2.0, -2.0), (2.0, 2.0)), n_curve: int = 201) -> FieldSpec:
    """B(x) = (sign x2, 0): a BV field with a jump of size 2 across x2 = 0."""
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    s = np.linspace(lo[0], hi[0], n_curve)
    jump = JumpStructure(np.stack([s, np.zeros_like(s)], 1), (1.0, 0.0), (0.0, 1.0), 2.0)

    def fn(t, X, hint=None):
        return np.stack([np.sign(X[:, 1]), np.zeros(len(X))], 1)

    return FieldSpec("shear_jump", fn, div=lambda t, X: np.zeros(len(X)), jump=jump,
                     box=(lo, hi), singular_distance=lambda X: np.abs(X[:, 1]),
                     eta=lambda X: np.tile([0.0, 1.0], (len(X), 1)))


# ------------------------------------------------------------ counterexample


def counterexample_region(x) -> np.ndarray:
    """Region codes; the diagonals |x1| = |x2| belong to the inner regions."""
    X = as_points(x, 2)
    inner = np.abs(X[:, 0]) <= np.abs(X[:, 1])
    upper = X[:, 1] > 0
    return np.where(upper, np.where(inner, UPPER_INNER, UPPER_OUTER),
                    np.where(inner, LOWER_INNER, LOWER_OUTER)).astype(int)


def _singular_distance(X: np.ndarray) -> np.ndarray:
    return np.minimum(np.abs(X[:, 1]), np.abs(np.abs(X[:, 0]) - np.abs(X[:, 1])) / np.sqrt(2.0))


def counterexample_field(x, region_hint=None) -> np.ndarray:
    """Piecewise field with inner part -(sign(x2) x1/x2^2, 1/|x2|) and outer
    part -(sign(x2) sign(x1), 1).

    Points within 1e-12 of the singular set use the formula of the region
    given by ``region_hint`` (an int or array of region codes). On x2 = 0
    only the outer formula has a finite one-sided limit.
    """
    single = np.ndim(x) == 1 or isinstance(x, Point)
    X = as_points(x.coords if isinstance(x, Point) else x, 2)
    x1, x2 = X[:, 0], X[:, 1]
    region = counterexample_region(X)
    near = _singular_distance(X) <= SINGULAR_TOL
    if np.any(near):
        if region_hint is None:
            raise SingularSetError("counterexample field evaluated on its singular set")
        hint = np.broadcast_to(np.asarray(region_hint, dtype=int), region.shape)
        region = np.where(near, hint, region)
    upper = (region == UPPER_INNER) | (region == UPPER_OUTER)
    inner = (region == UPPER_INNER) | (region == LOWER_INNER)
    on_line = np.abs(x2) <= SINGULAR_TOL
    if np.any(on_line & inner):
        raise SingularSetError("inner formula is unbounded on x2 = 0")
    sgn2 = np.where(upper, 1.0, -1.0)
    sgn1 = np.where(x1 != 0, np.sign(x1), 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = np.where(inner, -sgn2 * x1 / (x2 * x2), -sgn2 * sgn1)
        b2 = np.where(inner, -1.0 / np.abs(x2), -1.0)
    out = np.stack([b1, b2], 1)
    return out[0] if single else out


def counterexample_spec(box=((-3.0, -3.0), (3.0, 3.0))) -> FieldSpec:
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    return FieldSpec("counterexample_DL", lambda t, X, hint=None: counterexample_field(X, hint),
                     div=lambda t, X: np.zeros(len(X)), box=(lo, hi),
                     singular_distance=_singular_distance, region=counterexample_region)


# ------------------------------------------------------------ grid-backed fields


def _grid_sampler(grid_lo: np.ndarray, h: float, comps: Sequence[np.ndarray]):
    """Bilinear evaluation of cell-centered component arrays."""
    comps = [np.asarray(c, dtype=float) for c in comps]

    def sample(X: np.ndarray) -> np.ndarray:
        idx = ((X - grid_lo) / h - 0.5).T
        return np.stack([ndimage.map_coordinates(c, idx, order=1, mode="nearest") for c in comps], 1)

    return sample


def _check_grids(b: Sequence[ScalarGrid]) -> ScalarGrid:
    if not b:
        raise ConfigurationError("need at least one density")
    g0 = b[0]
    for g in b[1:]:
        if g.extents != g0.extents or g.h != g0.h or not np.allclose(g.origin, g0.origin):
            raise ConfigurationError("all densities must share one lattice")
    if g0.dim != 2:
        raise ConfigurationError("planar densities only")
    return g0


def convolution_field(kernels: Sequence[Sequence[Optional[RoughKernel]]], b: Sequence[ScalarGrid],
                      identity: Optional[Sequence[Sequence[float]]] = None,
                      admissibility_tol: float = 1e-8) -> FieldSpec:
    """B^i = sum_j (K^i_j * b_j + c^i_j b_j), cached on the lattice of ``b``.

    The optional identity coefficients c carry the Dirac share of operators
    such as R_j^2 = K_j + delta/2. Truncation radius is h/2.
    """
    g0 = _check_grids(b)
    m = len(b)
    if len(kernels) != 2 or any(len(row) != m for row in kernels):
        raise ConfigurationError("kernels must be a 2 x len(b) matrix")
    ident = np.zeros((2, m)) if identity is None else np.asarray(identity, dtype=float)
    if ident.shape != (2, m):
        raise ConfigurationError("identity coefficients must be a 2 x len(b) matrix")
    for row in kernels:
        for K in row:
            if K is None:
                continue
            if not np.isfinite(K.c1):
                raise DomainError(f"kernel {K.name} has an infinite seminorm")
            if not K.c2 <= admissibility_tol * max(1.0, K.c1):
                raise DomainError(f"kernel {K.name} fails the cancellation condition")
    comps = []
    for i in range(2):
        acc = np.zeros(g0.extents)
        for j in range(m):
            if kernels[i][j] is not None:
                acc += truncated_convolution(kernels[i][j], b[j], g0.h / 2).values
            acc += ident[i, j] * b[j].values
        comps.append(acc)
    sample = _grid_sampler(g0.origin, g0.h, comps)
    return FieldSpec("convolution", lambda t, X, hint=None: sample(X),
                     box=(g0.origin, g0.upper()), grid_h=g0.h,
                     params={"grids": [c.copy() for c in comps]})


def riesz_identity_field(b1: ScalarGrid, b2: ScalarGrid) -> FieldSpec:
    """B = (R_1^2 + R_2^2) applied componentwise to (b1, b2); equals (b1, b2)."""
    K1, K2 = riesz_squared_kernel(1), riesz_squared_kernel(2)
    return convolution_field([[K1, None, K2, None], [None, K1, None, K2]], [b1, b2, b1, b2],
                             identity=[[0.5, 0, 0.5, 0], [0, 0.5, 0, 0.5]])


def _mollifier(sigma: float, h: float) -> np.ndarray:
    m = int(np.ceil(sigma / h))
    s = np.arange(-m, m + 1) * h
    r2 = (s[:, None] ** 2 + s[None, :] ** 2) / sigma ** 2
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(r2 < 1, np.exp(-1.0 / (1.0 - np.minimum(r2, 1 - 1e-300))), 0.0)
    return w / w.sum()


def mollify(spec: FieldSpec, sigma: float, h: Optional[float] = None, box=None, t: float = 0.0) -> FieldSpec:
    """Convolve an autonomous field with the standard C-infinity bump of radius sigma.

    The result lives on a cell-centered lattice over ``box`` (default: the
    field's box) with spacing ``h`` (default sigma/4); its divergence and
    normal field come from central differences on that lattice.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if h is None:
        h = sigma / 4
    if sigma < 2 * h or (spec.grid_h is not None and sigma < 2 * spec.grid_h):
        raise DomainError("sigma must be at least twice the grid spacing")
    box = spec.box if box is None else box
    if box is None:
        raise ConfigurationError("mollify needs an evaluation box")
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    pad = int(np.ceil(sigma / h)) + 1
    n = np.round((hi - lo) / h).astype(int)
    ax = [lo[i] + (np.arange(-pad, n[i] + pad) + 0.5) * h for i in range(2)]
    G = np.stack(np.meshgrid(*ax, indexing="ij"), -1)
    vals = spec.eval(t, G.reshape(-1, 2)).reshape(G.shape)
    w = _mollifier(sigma, h)
    comps = []
    for i in range(2):
        full = signal.fftconvolve(vals[..., i], w, mode="same")
        comps.append(full[pad:-pad, pad:-pad])
    grads = [np.gradient(c, h) for c in comps]  # grads[i][j] = d_j B^i
    div = grads[0][0] + grads[1][1]
    sample = _grid_sampler(lo, h, comps)
    sample_div = _grid_sampler(lo, h, [div])
    sample_jac = _grid_sampler(lo, h, [grads[0][0], grads[0][1], grads[1][0], grads[1][1]])
    base_eta = spec.eta

    def eta(X):
        J = sample_jac(X).reshape(-1, 2, 2)
        _, s, vt = np.linalg.svd(J)
        e = vt[:, 0, :]
        e = e * np.where(e[:, np.argmax(np.abs(e).mean(0))] < 0, -1.0, 1.0)[:, None]
        weak = s[:, 0] <= 1e-12 * max(1.0, float(np.max(s[:, 0], initial=0.0)))
        if np.any(weak):
            fallback = base_eta(X) if base_eta is not None else np.tile([0.0, 1.0], (len(X), 1))
            e = np.where(weak[:, None], fallback, e)
        return e

    return FieldSpec(f"mollified({spec.kind},{sigma:g})", lambda t, X, hint=None: sample(X),
                     div=lambda t, X: sample_div(X)[:, 0], box=(lo, hi), eta=eta, grid_h=h,
                     params={"base": spec.kind, "sigma": sigma, "grids": comps, "div_grid": div})


# ------------------------------------------------------------ diagnostics


def divergence(spec: FieldSpec, t: float, x, h: float = 1e-4, return_flags: bool = False):
    """div B at points: analytic when available, else central differences.

    Points closer than 2h to the field's singular set are flagged.
    """
    single = np.ndim(x) == 1 or isinstance(x, Point)
    X = as_points(x.coords if isinstance(x, Point) else x, 2)
    flags = np.zeros(len(X), dtype=bool)
    if spec.singular_distance is not None:
        flags = spec.singular_distance(X) < 2 * h
    if spec.div is not None:
        val = np.asarray(spec.div(t, X), dtype=float)
    else:
        val = central_divergence(spec, t, X, h)
    if single:
        val, flags = float(val[0]), bool(flags[0])
    return (val, flags) if return_flags else val


def central_divergence(spec: FieldSpec, t: float, X: np.ndarray, h: float = 1e-4) -> np.ndarray:
    hint = spec.region(X) if spec.region is not None else None
    out = np.zeros(len(X))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        f = lambda k: spec.eval(t, X + k * e, hint)[:, i]
        # fourth-order central stencil
        out += (8 * (f(1) - f(-1)) - (f(2) - f(-2))) / (12 * h)
    return out


def growth_split(spec: FieldSpec, box, T: float, threshold: float = 1.0, n: int = 400,
                 nt: int = 1) -> GrowthSplit:
    """Split v = |B|/(1+|x|) at ``threshold``: the part above goes to L1(L1),
    the part below to L1(Linf). Midpoint quadrature in space and time."""
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    g = ScalarGrid.box(lo, hi, float(np.max(hi - lo)) / n)
    X = g.centers()
    if spec.singular_distance is not None:
        X = X[spec.singular_distance(X) > SINGULAR_TOL]
    dt = T / nt
    l1 = 0.0
    linf = 0.0
    for k in range(nt):
        v = np.linalg.norm(spec.eval((k + 0.5) * dt, X), axis=1) / (1 + np.linalg.norm(X, axis=1))
        big = v > threshold
        l1 += float(np.sum(v[big])) * g.cell_volume * dt
        linf += float(np.max(np.where(big, 0.0, v), initial=0.0)) * dt
    return GrowthSplit(l1, linf, threshold)


def field_from_config(cfg: dict) -> FieldSpec:
    """Build a field from {"kind": ..., parameters}."""
    kind = cfg.get("kind")
    box = cfg.get("box")
    if box is not None:
        box = (np.asarray(box[0], float), np.asarray(box[1], float))
    if kind == "shear":
        return shear_field() if box is None else shear_field(box)
    if kind == "rotation":
        return rotation_field(box)
    if kind == "linear":
        return linear_field(box)
    if kind == "sine":
        return sine_field(box)
    if kind == "zero":
        return zero_field(box)
    if kind == "constant":
        return constant_field(cfg["value"], box)
    if kind == "counterexample":
        return counterexample_spec() if box is None else counterexample_spec(box)
    if kind == "convolution":
        lo, hi = cfg.get("grid_box", [[-1, -1], [1, 1]])
        h = float(cfg.get("h", 1 / 64))
        s = float(cfg.get("width", 0.2))
        gauss = lambda P: np.exp(-np.sum(P ** 2, 1) / (2 * s * s))
        b = ScalarGrid.from_function(gauss, lo, hi, h)
        return riesz_identity_field(b, b.with_values(np.zeros(b.extents)))
    if kind == "mollified":
        if "base" not in cfg or "sigma" not in cfg:
            raise ConfigurationError("mollified field needs base and sigma")
        base = field_from_config(cfg["base"])
        return mollify(base, float(cfg["sigma"]), cfg.get("h"), box)
    raise ConfigurationError(f"unknown field kind {kind!r}")
