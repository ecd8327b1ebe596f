"""Shared data model: points, grid samples, discrete measures and level curves.

Everything here is immutable after construction. Grids store values at cell
centers, with ``origin`` the lower corner of the first cell.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised when operator parameters are invalid (empty grids, bad ranges)."""


class DomainError(ValueError):
    """Raised when an argument lies outside an operator's admissible range."""


def unit_ball_volume(k: int) -> float:
    """Lebesgue measure of the unit ball in R^k."""
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


@dataclass(frozen=True)
class Point:
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise DomainError("point coordinates must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.size


def as_points(pts, dim: Optional[int] = None) -> np.ndarray:
    """Coerce points (Point objects, arrays, scalars for 1-D) to an (n, d) float array."""
    if isinstance(pts, Point):
        arr = pts.coords[None, :]
    elif isinstance(pts, (list, tuple)) and pts and isinstance(pts[0], Point):
        arr = np.stack([p.coords for p in pts])
    else:
        arr = np.asarray(pts, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr[:, None] if dim == 1 else arr[None, :]
    if dim is not None and arr.shape[1] != dim:
        raise ConfigurationError(f"expected points of dimension {dim}, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True)
class ScalarGrid:
    """Cell-centered samples on a uniform lattice with spacing ``h``."""

    origin: np.ndarray
    h: float
    extents: tuple
    values: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(-1)
        extents = tuple(int(n) for n in self.extents)
        if not self.h > 0:
            raise ConfigurationError("grid spacing must be positive")
        if len(extents) != origin.size:
            raise ConfigurationError("extents and origin dimensions differ")
        vals = np.asarray(self.values, dtype=float)
        if vals.size != int(np.prod(extents)):
            raise ConfigurationError("value array length must equal product of extents")
        vals = vals.reshape(extents)
        vals.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "h", float(self.h))

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def axes(self) -> list:
        return [self.origin[i] + (np.arange(n) + 0.5) * self.h for i, n in enumerate(self.extents)]

    def centers(self) -> np.ndarray:
        """All cell centers as an (N, d) array in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def upper(self) -> np.ndarray:
        return self.origin + self.h * np.asarray(self.extents)

    def with_values(self, values) -> "ScalarGrid":
        return ScalarGrid(self.origin, self.h, self.extents, values)

    @classmethod
    def box(cls, lo, hi, h: float, values=None) -> "ScalarGrid":
        """Grid covering [lo, hi] per axis with cell size ``h`` (extents rounded)."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        ext = tuple(int(round((b - a) / h)) for a, b in zip(lo, hi))
        if values is None:
            values = np.zeros(ext)
        return cls(lo, h, ext, values)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], lo, hi, h: float) -> "ScalarGrid":
        g = cls.box(lo, hi, h)
        return g.with_values(np.asarray(fn(g.centers()), dtype=float).reshape(g.extents))


@dataclass(frozen=True)
class DiscreteMeasure:
    """Signed measure made of weighted atoms plus an optional cell density.

    ``points`` holds atom locations as an (n, k) array in the coordinates of the
    ambient space of dimension ``k``.
    """

    points: np.ndarray
    weights: np.ndarray
    density: Optional[ScalarGrid] = None
    k: int = 2
    bbox: Optional[tuple] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = np.zeros((0, self.k))
        pts = pts.reshape(-1, self.k)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != pts.shape[0]:
            raise ConfigurationError("one weight per atom required")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise DomainError("atoms and weights must be finite")
        if self.density is not None and self.density.dim != self.k:
            raise ConfigurationError("density grid dimension must equal k")
        if self.bbox is not None and pts.shape[0]:
            lo, hi = (np.asarray(b, dtype=float) for b in self.bbox)
            if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
                raise DomainError("atoms must lie inside the declared bounding box")
        for a in (pts, w):
            a.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, at=None, mass: float = 1.0, k: int = 2) -> "DiscreteMeasure":
        at = np.zeros(k) if at is None else np.asarray(at, dtype=float).reshape(k)
        return cls(at[None, :], np.array([mass]), None, k)

    @classmethod
    def zero(cls, k: int = 2) -> "DiscreteMeasure":
        return cls(np.zeros((0, k)), np.zeros(0), None, k)

    @property
    def has_density(self) -> bool:
        return self.density is not None

    def scaled(self, c: float) -> "DiscreteMeasure":
        dens = None if self.density is None else self.density.with_values(c * self.density.values)
        return DiscreteMeasure(self.points, c * self.weights, dens, self.k, self.bbox)

    def translated(self, shift) -> "DiscreteMeasure":
        shift = np.asarray(shift, dtype=float).reshape(self.k)
        dens = None
        if self.density is not None:
            d = self.density
            dens = ScalarGrid(d.origin + shift, d.h, d.extents, d.values)
        return DiscreteMeasure(self.points + shift, self.weights, dens, self.k)

    def plus(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        """Sum of two measures; densities must share a grid if both are present."""
        if other.k != self.k:
            raise ConfigurationError("dimension mismatch")
        dens = self.density or other.density
        if self.density is not None and other.density is not None:
            a, b = self.density, other.density
            if a.extents != b.extents or a.h != b.h or not np.allclose(a.origin, b.origin):
                raise ConfigurationError("densities live on different grids")
            dens = a.with_values(a.values + b.values)
        return DiscreteMeasure(
            np.vstack([self.points, other.points]),
            np.concatenate([self.weights, other.weights]),
            dens,
            self.k,
        )

    def as_atoms(self) -> tuple:
        """Atoms together with density cells lumped at their centers (points, masses)."""
        if self.density is None:
            return self.points, self.weights
        d = self.density
        mass = d.values.ravel() * d.cell_volume
        keep = mass != 0
        return (
            np.vstack([self.points, d.centers()[keep]]),
            np.concatenate([self.weights, mass[keep]]),
        )


@dataclass(frozen=True)
class VectorMeasure:
    """d-tuple of scalar measures sharing atom locations, with optional rank-one data."""

    components: tuple
    xi: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ConfigurationError("at least one component required")
        p0 = comps[0].points
        for c in comps[1:]:
            if c.points.shape != p0.shape or not np.array_equal(c.points, p0):
                raise ConfigurationError("components must share atom locations")
        for name in ("xi", "eta"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).reshape(p0.shape[0], -1)
                if not np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12):
                    raise DomainError(f"{name} must be unit vectors at every atom")
                object.__setattr__(self, name, v)
        object.__setattr__(self, "components", comps)

    def total_variation_measure(self) -> DiscreteMeasure:
        """|mu| as a positive scalar measure (Euclidean norm of the components)."""
        c0 = self.components[0]
        w = np.sqrt(sum(c.weights ** 2 for c in self.components))
        dens = None
        if any(c.density is not None for c in self.components):
            g = next(c.density for c in self.components if c.density is not None)
            v = np.sqrt(sum((c.density.values ** 2 if c.density is not None else 0.0) for c in self.components))
            dens = g.with_values(v)
        return DiscreteMeasure(c0.points, w, dens, c0.k)


@dataclass(frozen=True)
class LevelCurve:
    lambdas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).reshape(-1)
        val = np.asarray(self.values, dtype=float).reshape(-1)
        if lam.size != val.size:
            raise ConfigurationError("lambda and value arrays differ in length")
        if np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
            raise ConfigurationError("lambda grid must be positive and strictly increasing")
        if np.any(val < 0):
            raise DomainError("level-curve values must be nonnegative")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "values", val)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "value"])
        for lam, v in zip(self.lambdas, self.values):
            w.writerow([f"{lam:.17g}", f"{v:.17g}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "LevelCurve":
        text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) else source
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1])


def measure_total_variation(mu: DiscreteMeasure) -> float:
    tv = float(np.abs(mu.weights).sum())
    if mu.density is not None:
        tv += float(np.abs(mu.density.values).sum() * mu.density.cell_volume)
    return tv


def superlevel_measure(samples: ScalarGrid, lam: float) -> float:
    """Lebesgue measure of {f > lam}, counting cells by their center sample."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    return float(np.count_nonzero(samples.values > lam)) * samples.cell_volume


def level_curve(samples: ScalarGrid, lambdas: Sequence[float]) -> LevelCurve:
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    if lam.size == 0:
        raise ConfigurationError("empty lambda grid")
    if np.any(np.diff(lam) <= 0):
        raise ConfigurationError("lambda grid must be strictly increasing")
    # sort once, then count by bisection
    flat = np.sort(samples.values.ravel())
    counts = flat.size - np.searchsorted(flat, lam, side="right")
    return LevelCurve(lam, lam * counts * samples.cell_volume)


def geometric_grid(lo: float, hi: float, per_octave: int = 8) -> np.ndarray:
    """Geometric grid anchored at powers of two, covering [lo, hi] inclusively."""
    if not (0 < lo <= hi):
        raise ConfigurationError("need 0 < lo <= hi for a geometric grid")
    j0 = math.floor(math.log2(lo) * per_octave + 1e-9)
    j1 = math.ceil(math.log2(hi) * per_octave - 1e-9)
    g = 2.0 ** (np.arange(j0, j1 + 1) / per_octave)
    g = g[(g >= lo * (1 - 1e-12)) & (g <= hi * (1 + 1e-12))]
    return g


@dataclass(frozen=True)
class DirectionFn:
    """Function on the unit circle sampled at angles 2*pi*i/N (degree-zero extension)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).reshape(-1)
        if s.size < 2 or not np.all(np.isfinite(s)):
            raise DomainError("need at least two finite angular samples")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n) / self.n

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], n: int = 512) -> "DirectionFn":
        th = 2 * np.pi * np.arange(n) / n
        return cls(np.asarray(fn(th), dtype=float) * np.ones(n))

    def __call__(self, theta) -> np.ndarray:
        """Periodic linear interpolation at angle(s) theta."""
        t = np.mod(np.asarray(theta, dtype=float), 2 * np.pi) * self.n / (2 * np.pi)
        i0 = np.floor(t).astype(int) % self.n
        frac = t - np.floor(t)
        return (1 - frac) * self.samples[i0] + frac * self.samples[(i0 + 1) % self.n]

    def at_vectors(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self(np.arctan2(v[..., 1], v[..., 0]))
