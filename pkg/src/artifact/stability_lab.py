"""Comparison functionals for pairs of flows.

Quadratures run over the particles of the shared lattice cloud that lie
in the ball B_r, each particle carrying the cell measure h_p^2. Particles
escaped in either flow are dropped.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .bv_fields import FieldSpec
from .core_model import ConfigurationError, DomainError, ScalarGrid
from .flow_engine import ParticleCloud, ParticleFlow, integrate_flow

__all__ = [
    "FunctionalReport",
    "StabilityResult",
    "phi_delta",
    "phi_anisotropic",
    "superlevel_flow_distance",
    "anisotropic_drift_term",
    "perturbation_l1",
    "stability_experiment",
    "reports_to_csv",
]

CSV_HEADER = "delta,gamma,phi,phi_over_logdelta,superlevel,drift_term"


@dataclass(frozen=True)
class FunctionalReport:
    delta: float
    gamma: float
    phi: float
    phi_over_logdelta: float
    superlevel: float
    drift_term: float
    label: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = (self.phi, self.phi_over_logdelta, self.superlevel, self.drift_term)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise DomainError("functional values must be finite and nonnegative")

    def csv_row(self) -> str:
        return ",".join(f"{v:.17g}" for v in (self.delta, self.gamma, self.phi,
                                             self.phi_over_logdelta, self.superlevel, self.drift_term))


@dataclass(frozen=True)
class StabilityResult:
    reports: list
    l1_diff: float
    l1_to_base: tuple


def reports_to_csv(reports: Sequence[FunctionalReport], path=None) -> str:
    text = CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _pair(flow1: ParticleFlow, flow2: ParticleFlow, r: float):
    if flow1.cloud.points.shape != flow2.cloud.points.shape or not np.array_equal(
        flow1.cloud.points, flow2.cloud.points
    ):
        raise ConfigurationError("flows must share one particle cloud")
    if flow1.times.shape != flow2.times.shape or not np.allclose(flow1.times, flow2.times):
        raise ConfigurationError("flows must share one time grid")
    mask = flow1.cloud.in_ball(r) & flow1.valid & flow2.valid
    return mask, flow1.cloud.cell_measure


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")


def _time_index(flow: ParticleFlow, t: Optional[float]) -> int:
    return len(flow.times) - 1 if t is None else flow.index_of(t)


def phi_delta(flow1: ParticleFlow, flow2: ParticleFlow, delta: float, r: float,
              t: Optional[float] = None) -> float:
    """int_{B_r} log(1 + |X1 - X2| / delta) at time t (default: final time)."""
    _check_delta(delta)
    mask, w = _pair(flow1, flow2, r)
    j = _time_index(flow1, t)
    d = np.linalg.norm(flow1.positions[j, mask] - flow2.positions[j, mask], axis=1)
    return float(np.sum(np.log1p(d / delta)) * w)


def phi_anisotropic(flow1: ParticleFlow, flow2: ParticleFlow, delta: float, gamma: float,
                    eta_field: Callable, r: float, t: Optional[float] = None,
                    check_range: bool = True) -> float:
    """(1/2) int_{B_r} log(1 + (|dX|^2 + gamma <eta(X1), dX>^2) / delta^2)."""
    _check_delta(delta)
    if check_range and not 1 <= gamma < abs(np.log(delta)):
        raise DomainError("gamma must satisfy 1 <= gamma < |log delta|")
    mask, w = _pair(flow1, flow2, r)
    j = _time_index(flow1, t)
    X1 = flow1.positions[j, mask]
    dX = X1 - flow2.positions[j, mask]
    eta = np.asarray(eta_field(X1), dtype=float).reshape(X1.shape)
    if len(eta) and not np.allclose(np.linalg.norm(eta, axis=1), 1.0, atol=1e-10):
        raise DomainError("eta must be a unit vector field")
    q = np.einsum("ij,ij->i", dX, dX) + gamma * np.einsum("ij,ij->i", eta, dX) ** 2
    return float(0.5 * np.sum(np.log1p(q / delta ** 2)) * w)


def superlevel_flow_distance(flow1: ParticleFlow, flow2: ParticleFlow, delta: float, r: float,
                             t: Optional[float] = None) -> float:
    """Measure of {x in B_r : |X1 - X2| > sqrt(delta)} at time t, or its sup over
    the stored times when t is None."""
    _check_delta(delta)
    mask, w = _pair(flow1, flow2, r)
    sel = slice(None) if t is None else slice(flow1.index_of(t), flow1.index_of(t) + 1)
    d = np.linalg.norm(flow1.positions[sel][:, mask] - flow2.positions[sel][:, mask], axis=2)
    return float(np.max(np.sum(d > np.sqrt(delta), axis=1), initial=0) * w)


def anisotropic_drift_term(flow1: ParticleFlow, flow2: ParticleFlow, spec: FieldSpec,
                           eta_field: Callable, delta: float, r: float) -> float:
    """(1/|log delta|) int_0^T int_{B_r} |<eta(X1), B(X1) - B(X2)>| / (delta + |X1 - X2|),
    trapezoid in time over the stored grid."""
    _check_delta(delta)
    mask, w = _pair(flow1, flow2, r)
    vals = []
    for j, t in enumerate(flow1.times):
        X1 = flow1.positions[j, mask]
        X2 = flow2.positions[j, mask]
        if not len(X1):
            vals.append(0.0)
            continue
        eta = eta_field(X1)
        num = np.abs(np.einsum("ij,ij->i", eta, spec.eval(t, X1) - spec.eval(t, X2)))
        vals.append(float(np.sum(num / (delta + np.linalg.norm(X1 - X2, axis=1)))) * w)
    total = np.trapezoid(vals, flow1.times) if len(vals) > 1 else 0.0
    return float(total) / abs(np.log(delta))


def perturbation_l1(f1: FieldSpec, f2: FieldSpec, box, T: float, h: float, nt: int = 1) -> float:
    """||f1 - f2||_{L1([0,T] x box)} by midpoint quadrature."""
    g = ScalarGrid.box(box[0], box[1], h)
    X = g.centers()
    dt = T / nt
    total = 0.0
    for k in range(nt):
        t = (k + 0.5) * dt
        total += float(np.sum(np.linalg.norm(f1.eval(t, X) - f2.eval(t, X), axis=1))) * g.cell_volume * dt
    return total


def stability_experiment(B: FieldSpec, B1: FieldSpec, B2: FieldSpec, params: dict) -> StabilityResult:
    """Integrate the flows of B1 and B2 and tabulate the functionals.

    ``params``: deltas, gammas (default 1, 10, 100; cells with gamma >=
    |log delta| are skipped), r, T, dt, h_p, norm_box, norm_h, eta
    (callable; default B.eta).
    """
    deltas = list(params.get("deltas", [1e-2, 1e-3, 1e-4]))
    gammas = list(params.get("gammas", [1.0, 10.0, 100.0]))
    if not deltas or not gammas:
        raise ConfigurationError("delta and gamma grids must be non-empty")
    r = float(params.get("r", 0.5))
    T = float(params.get("T", 1.0))
    dt = float(params.get("dt", 1e-2))
    hp = float(params.get("h_p", 5e-3))
    eta = params.get("eta") or B.eta
    if eta is None:
        raise ConfigurationError("stability experiment needs a normal field eta")
    cloud = ParticleCloud.lattice([-r, -r], [r, r], hp)
    store = int(params.get("store_every", 10))
    f1 = integrate_flow(B1, cloud, 0.0, T, dt, store_every=store)
    f2 = integrate_flow(B2, cloud, 0.0, T, dt, store_every=store)
    nbox = params.get("norm_box", [[-r - T, -r - T], [r + T, r + T]])
    nh = float(params.get("norm_h", min(h for h in (B1.grid_h, B2.grid_h, hp) if h)))
    diff = perturbation_l1(B1, B2, nbox, T, nh)
    to_base = (perturbation_l1(B1, B, nbox, T, nh), perturbation_l1(B2, B, nbox, T, nh))
    reports = []
    for d in deltas:
        phi = phi_delta(f1, f2, d, r)
        sup = superlevel_flow_distance(f1, f2, d, r)
        drift = anisotropic_drift_term(f1, f2, B, eta, d, r)
        for g in gammas:
            if not g < abs(np.log(d)):
                continue
            aniso = phi_anisotropic(f1, f2, d, g, eta, r)
            reports.append(FunctionalReport(d, g, phi, phi / abs(np.log(d)), sup, drift,
                                            label=params.get("label", ""),
                                            extra={"phi_aniso": aniso, "l1_diff": diff}))
    return StabilityResult(reports, diff, to_base)
