"""Independent reference computations used by the tests and the acceptance suite.

Each oracle takes a different numerical route from the operator it
checks: Fourier multipliers instead of lattice sums, nested polar
quadrature instead of FFT convolution, closed-form characteristics
instead of RK4, brute-force scans instead of sorted sweeps.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core_model import ScalarGrid, as_points

__all__ = [
    "riesz_square_multiplier_oracle",
    "nested_composite_oracle",
    "rotation_transport_oracle",
    "brute_cone_maximal",
    "brute_hl_maximal_1d",
]


def riesz_square_multiplier_oracle(f: ScalarGrid, j: int = 1, pad: int = 4) -> np.ndarray:
    """(R_j^2 - Id/2) f via the multiplier xi_j^2/|xi|^2 - 1/2 on a zero-padded FFT grid."""
    n1, n2 = f.extents
    m1, m2 = pad * n1, pad * n2
    F = np.zeros((m1, m2))
    F[:n1, :n2] = f.values
    k1 = np.fft.fftfreq(m1, d=f.h)
    k2 = np.fft.fftfreq(m2, d=f.h)
    K1, K2 = np.meshgrid(k1, k2, indexing="ij")
    k2sum = K1 ** 2 + K2 ** 2
    k2sum[0, 0] = 1.0
    m = (K1 if j == 1 else K2) ** 2 / k2sum - 0.5
    m[0, 0] = 0.0
    return np.real(np.fft.ifft2(np.fft.fft2(F) * m))[:n1, :n2]


def _gl(a: float, b: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _pv_polar(omega: Callable, f: Callable, z: np.ndarray, R: float, n_r: int, n_th: int) -> np.ndarray:
    """PV int K(w) f(z - w) dw for K = omega(theta)/|w|^2, mean-zero omega, |w| < R."""
    th = (np.arange(n_th) + 0.5) * 2 * np.pi / n_th
    u = np.stack([np.cos(th), np.sin(th)], 1)
    om = omega(u)
    nodes, weights = [], []
    edges = [0.0, 0.05, 0.25, 1.0, R]
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = _gl(a, b, n_r)
        nodes.append(x)
        weights.append(w)
    r = np.concatenate(nodes)
    wr = np.concatenate(weights)
    out = np.zeros(len(z))
    f0 = f(z)
    for ri, wi in zip(r, wr):
        P = z[:, None, :] - ri * u[None, :, :]
        vals = f(P.reshape(-1, 2)).reshape(len(z), n_th) - f0[:, None]
        out += wi / ri * (vals @ om) * (2 * np.pi / n_th)
    return out


def nested_composite_oracle(omega: Callable, f: Callable, bump: Callable, alpha: float, rho: float,
                            x, R: float = 3.0, n_r: int = 24, n_th: int = 96,
                            n_outer_r: int = 32, n_outer_th: int = 96) -> np.ndarray:
    """(rho^{-alpha} |.|^{alpha-2} phi(./rho)) * (K * f) at points x by nested polar quadrature.

    The outer radial integral uses s = r^alpha to remove the endpoint singularity.
    """
    x = as_points(x, 2)
    s, ws = _gl(0.0, rho ** alpha, n_outer_r)
    r = s ** (1.0 / alpha)
    th = (np.arange(n_outer_th) + 0.5) * 2 * np.pi / n_outer_th
    u = np.stack([np.cos(th), np.sin(th)], 1)
    out = np.zeros(len(x))
    for i, xi in enumerate(x):
        P = (xi[None, None, :] - r[:, None, None] * u[None, :, :]).reshape(-1, 2)
        g = _pv_polar(omega, f, P, R, n_r, n_th).reshape(len(r), n_outer_th)
        radial = bump(np.stack([r[:, None] * u[None, :, 0], r[:, None] * u[None, :, 1]], -1) / rho)
        # r^{alpha-1} dr = ds / alpha
        out[i] = rho ** (-alpha) / alpha * np.sum(ws[:, None] * radial * g) * (2 * np.pi / n_outer_th)
    return out


def rotation_transport_oracle(u0: Callable, G: Callable, x, t: float, n_steps: int) -> np.ndarray:
    """u(t, x) for B = (-x2, x1), F = 0, from exact rotated characteristics and a
    trapezoid rule with ``n_steps`` intervals on the exponent."""
    x = as_points(x, 2)
    c, s = np.cos(t), np.sin(t)
    xbar = np.stack([c * x[:, 0] + s * x[:, 1], -s * x[:, 0] + c * x[:, 1]], 1)
    tau = np.linspace(0.0, t, n_steps + 1)
    vals = np.empty((len(tau), len(x)))
    for k, tk in enumerate(tau):
        ck, sk = np.cos(tk), np.sin(tk)
        Xk = np.stack([ck * xbar[:, 0] - sk * xbar[:, 1], sk * xbar[:, 0] + ck * xbar[:, 1]], 1)
        vals[k] = G(tk, Xk)
    return u0(xbar) * np.exp(np.trapezoid(vals, tau, axis=0))


def brute_cone_maximal(pts: np.ndarray, w: np.ndarray, x: np.ndarray, eps: float,
                       radii: Sequence[float], n_dir: int) -> np.ndarray:
    """eps^{-1} sup over directions and radii of mu(cone & ball)/|ball| by full scan."""
    pts = as_points(pts, 2)
    x = as_points(x, 2)
    w = np.asarray(w, float)
    ang = 2 * np.pi * np.arange(n_dir) / n_dir
    E = np.stack([np.cos(ang), np.sin(ang)], 1)
    out = np.zeros(len(x))
    for i, xi in enumerate(x):
        dz = pts - xi
        d = np.linalg.norm(dz, axis=1)
        keep = d > 0
        u = dz[keep] / d[keep, None]
        inc = np.linalg.norm(u[None, :, :] - E[:, None, :], axis=2) <= eps
        best = 0.0
        for r in radii:
            m = (inc * (w[keep] * (d[keep] <= r))[None, :]).sum(1).max()
            best = max(best, m / (np.pi * r * r))
        out[i] = best / eps
    return out


def brute_hl_maximal_1d(pts: np.ndarray, w: np.ndarray, x: np.ndarray, radii: Sequence[float]) -> np.ndarray:
    """sup over radii of mu([x - r, x + r]) / (2r) for atoms on the line."""
    pts = np.asarray(pts, float).ravel()
    w = np.asarray(w, float)
    x = np.asarray(x, float).ravel()
    d = np.abs(x[:, None] - pts[None, :])
    out = np.zeros(len(x))
    for r in radii:
        out = np.maximum(out, (w[None, :] * (d <= r)).sum(1) / (2 * r))
    return out
