import json

import numpy as np
import pytest

from artifact.bv_fields import constant_field, linear_field, rotation_field, zero_field
from artifact.core_model import ConfigurationError, DomainError, ScalarGrid
from artifact.experiments import _rotation_problem
from artifact.oracles import rotation_transport_oracle
from artifact.transport_solver import (
    PolyBump,
    TransportProblem,
    default_test_functions,
    defect_json,
    eulerian_upwind,
    grid_to_csv,
    renormalization_defect,
    solve_lagrangian,
)

BOX = ((-1, -1), (1, 1))


def _gauss(c=(0.0, 0.0), s=0.15):
    return lambda X: np.exp(-((X[:, 0] - c[0]) ** 2 + (X[:, 1] - c[1]) ** 2) / (2 * s * s))


def _grid(fn, h=1 / 32):
    return ScalarGrid.from_function(fn, BOX[0], BOX[1], h)


def test_zero_field_keeps_initial_datum():
    g = _grid(_gauss())
    S = solve_lagrangian(TransportProblem(g, zero_field(), 0.5))
    np.testing.assert_allclose(S.grids[-1].values, g.values, atol=1e-14)


def test_decay_source():
    g = _grid(_gauss())
    P = TransportProblem(g, zero_field(), 1.0, G=lambda t, X: -np.ones(len(X)))
    S = solve_lagrangian(P)
    np.testing.assert_allclose(S.grids[-1].values, np.exp(-1.0) * g.values, rtol=1e-12)


def test_constant_forcing():
    g = _grid(lambda X: np.zeros(len(X)))
    P = TransportProblem(g, zero_field(), 0.5, F=lambda t, X: np.ones(len(X)))
    np.testing.assert_allclose(solve_lagrangian(P).grids[-1].values, 0.5, rtol=1e-12)


def test_linear_field_compresses_mass():
    # div B = 2, so u(t, x) = e^{-2t} u0(e^{-t} x)
    fn = _gauss(s=0.2)
    g = _grid(fn)
    field = linear_field(box=((-5, -5), (5, 5)))
    S = solve_lagrangian(TransportProblem(g, field, 0.5, u0_fn=fn), dt=1e-3)
    ref = np.exp(-1.0) * fn(np.exp(-0.5) * g.centers())
    np.testing.assert_allclose(S.grids[-1].values.ravel(), ref, atol=1e-10)
    np.testing.assert_allclose(S.alt_grids[-1].values, S.grids[-1].values, atol=1e-10)


def test_rotation_matches_oracle():
    P, u0, G = _rotation_problem(1 / 32, 2)
    S = solve_lagrangian(P)
    ref = rotation_transport_oracle(u0, G, P.u0.centers(), 1.0, 10000)
    assert np.max(np.abs(S.grids[-1].values.ravel() - ref)) <= 1e-3


def test_problem_validation():
    g = _grid(_gauss())
    with pytest.raises(ConfigurationError):
        TransportProblem(g, zero_field(), 0.0)
    with pytest.raises(ConfigurationError):
        TransportProblem(g.with_values(np.full(g.extents, np.nan)), zero_field(), 1.0)


def test_upwind_zero_field_unchanged():
    g = _grid(_gauss())
    S = eulerian_upwind(TransportProblem(g, zero_field(), 0.5), 0.01)
    np.testing.assert_array_equal(S.grids[-1].values, g.values)


def _translation_error(h):
    fn = _gauss(s=0.2)
    g = _grid(fn, h)
    S = eulerian_upwind(TransportProblem(g, constant_field([1.0, 0.0]), 0.5), 0.5 * h)
    ref = fn(g.centers() - [0.5, 0.0]).reshape(g.extents)
    return np.sum(np.abs(S.grids[-1].values - ref)) * g.cell_volume, S, g


def test_upwind_translation_first_order():
    e1, _, _ = _translation_error(1 / 32)
    e2, _, _ = _translation_error(1 / 64)
    assert 1.6 <= e1 / e2 <= 2.4


def test_upwind_conserves_mass():
    _, S, g = _translation_error(1 / 32)
    assert abs(S.grids[-1].values.sum() - g.values.sum()) * g.cell_volume <= 1e-10
    P = TransportProblem(g, rotation_field(), 0.5)
    S = eulerian_upwind(P, 0.01)
    assert abs(S.grids[-1].values.sum() - g.values.sum()) * g.cell_volume <= 1e-10


def test_upwind_cfl_violation():
    g = _grid(_gauss())
    with pytest.raises(DomainError):
        eulerian_upwind(TransportProblem(g, constant_field([1.0, 0.0]), 0.5), 0.1)


def test_upwind_and_lagrangian_agree_roughly():
    P, _, _ = _rotation_problem(1 / 64, 2)
    P = TransportProblem(P.u0, P.field, 0.5, G=P.G, times=[0.0, 0.5], u0_fn=P.u0_fn)
    a = solve_lagrangian(P).grids[-1].values
    b = eulerian_upwind(P, 1 / 256).grids[-1].values
    assert np.sum(np.abs(a - b)) / np.sum(np.abs(a)) <= 0.1


BETA = (lambda z: z / (1 + z * z), lambda z: (1 - z * z) / (1 + z * z) ** 2)


def test_defect_zero_solution():
    g = _grid(lambda X: np.zeros(len(X)))
    P = TransportProblem(g, rotation_field(), 1.0, times=np.linspace(0, 1, 5))
    assert np.all(renormalization_defect(solve_lagrangian(P), P, *BETA) == 0)


def test_defect_decreases_under_refinement():
    d = []
    for h, nt in ((1 / 16, 11), (1 / 32, 21)):
        P, _, _ = _rotation_problem(h, nt)
        d.append(np.max(np.abs(renormalization_defect(solve_lagrangian(P), P, *BETA))))
    assert d[0] >= 2 * d[1]


def test_identity_beta_is_weak_residual():
    P, _, _ = _rotation_problem(1 / 32, 11)
    S = solve_lagrangian(P)
    tests = default_test_functions(BOX, 1.0)
    got = renormalization_defect(S, P, lambda z: z, lambda z: np.ones_like(z), tests)
    X = P.u0.centers()
    rows = []
    for t, grid in zip(S.times, S.grids):
        u = grid.values.ravel()
        B = rotation_field().eval(t, X)
        row = []
        for tf in tests:
            phi, phit, gphi = tf.eval(t, X)
            row.append(np.sum(-u * phit - u * np.sum(B * gphi, 1) - X[:, 0] * u * phi) * P.u0.cell_volume)
        rows.append(row)
    np.testing.assert_allclose(got, np.trapezoid(np.array(rows), S.times, axis=0), rtol=1e-12, atol=1e-15)


def test_test_function_support_checked():
    P, _, _ = _rotation_problem(1 / 16, 5)
    S = solve_lagrangian(P)
    bad = PolyBump((0.0, 0.5), (-0.5, 0.5), (-0.5, 0.5))
    with pytest.raises(DomainError):
        renormalization_defect(S, P, *BETA, tests=[bad])


def test_poly_bump_derivatives():
    b = PolyBump((0.1, 0.9), (-0.5, 0.5), (-0.4, 0.6))
    X = np.array([[0.1, 0.2], [-0.3, 0.0]])
    t, e = 0.4, 1e-6
    _, phit, gphi = b.eval(t, X)
    fd_t = (b.eval(t + e, X)[0] - b.eval(t - e, X)[0]) / (2 * e)
    fd_x = (b.eval(t, X + [e, 0])[0] - b.eval(t, X - [e, 0])[0]) / (2 * e)
    np.testing.assert_allclose(phit, fd_t, rtol=1e-6)
    np.testing.assert_allclose(gphi[:, 0], fd_x, rtol=1e-6)


def test_outputs():
    g = ScalarGrid.box([0, 0], [1, 1], 0.5, np.ones((2, 2)))
    assert grid_to_csv(g).splitlines()[0] == "x1,x2,u"
    assert json.loads(defect_json("z/(1+z^2)", [1e-3]))["residuals"] == [1e-3]
