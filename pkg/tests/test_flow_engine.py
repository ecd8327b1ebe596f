import numpy as np
import pytest

from artifact.bv_fields import linear_field, rotation_field, sine_field, zero_field
from artifact.core_model import ConfigurationError, DomainError, ScalarGrid
from artifact.flow_engine import (
    ParticleCloud,
    compressibility,
    counterexample_flows,
    counterexample_ode_residual,
    counterexample_positions,
    integrate_flow,
    jacobian_track,
    semigroup_residual,
    sublevel_GR,
)


def _cloud(h=0.1, r=1.0):
    return ParticleCloud.lattice([-r, -r], [r, r], h)


def test_zero_field_is_identity():
    c = _cloud()
    f = integrate_flow(zero_field(), c, 0.0, 1.0, 0.1)
    np.testing.assert_array_equal(f.final, c.points)


def test_rotation_full_period():
    c = _cloud()
    f = integrate_flow(rotation_field(), c, 0.0, 2 * np.pi, 0.01)
    assert np.abs(f.final - c.points).max() <= 1e-8


def test_rotation_rk4_order():
    c = _cloud(0.25)
    e = [np.abs(integrate_flow(rotation_field(), c, 0.0, 2 * np.pi, dt).final - c.points).max()
         for dt in (0.1, 0.05)]
    assert 12 <= e[0] / e[1] <= 20


def test_linear_exponential_growth():
    c = _cloud(0.25, 0.5)
    f = integrate_flow(linear_field(), c, 0.0, 1.0, 0.01)
    np.testing.assert_allclose(f.final, np.e * c.points, atol=1e-9)


def test_backward_integration_inverts():
    c = _cloud(0.2)
    fwd = integrate_flow(sine_field(), c, 0.0, 1.0, 0.01)
    back = integrate_flow(sine_field(), ParticleCloud(fwd.final, c.h), 1.0, 0.0, 0.01)
    assert np.abs(back.final - c.points).max() <= 1e-8


def test_escaped_particles_flagged():
    c = _cloud(0.25, 0.5)
    f = integrate_flow(linear_field(), c, 0.0, 2.0, 0.01, box=((-1, -1), (1, 1)))
    assert f.escaped.any() and not f.escaped.all()
    assert np.all(np.abs(f.final[f.valid]) <= 1)


def test_compressibility_rotation():
    c = _cloud(0.005, 0.7)
    f = integrate_flow(rotation_field(), c, 0.0, 1.0, 0.05, store_every=20)
    rep = compressibility(f, ScalarGrid.box([-0.4, -0.4], [0.4, 0.4], 0.1))
    assert rep.L <= 1.1
    assert not rep.underresolved


def test_compressibility_linear_detects_contraction():
    c = _cloud(0.01, 1.0)
    f = integrate_flow(linear_field(), c, 0.0, 0.5, 0.05, box=((-3, -3), (3, 3)))
    rep = compressibility(f, ScalarGrid.box([-0.5, -0.5], [0.5, 0.5], 0.1), [-1])
    np.testing.assert_allclose(rep.densities[0], np.exp(-1.0), rtol=0.1)


def test_compressibility_underresolved_flag():
    c = _cloud(0.1, 0.5)
    f = integrate_flow(zero_field(), c, 0.0, 0.1, 0.1)
    assert compressibility(f, ScalarGrid.box([-0.5, -0.5], [0.5, 0.5], 0.1)).underresolved


def test_sublevel_GR_empty_complement_for_rotation():
    f = integrate_flow(rotation_field(), _cloud(0.1), 0.0, 1.0, 0.05)
    _, m = sublevel_GR(f, 2.0, 1.0)
    assert m == 0


def test_sublevel_GR_nested_and_monotone():
    f = integrate_flow(linear_field(), _cloud(0.05), 0.0, 1.0, 0.05, box=((-5, -5), (5, 5)))
    Rs = [0.5, 1.0, 2.0]
    sets = [sublevel_GR(f, R)[0] for R in Rs]
    for a, b in zip(sets, sets[1:]):
        assert np.all(~a | b)
    ms = [sublevel_GR(f, R, 1.0)[1] for R in Rs]
    assert ms[0] >= ms[1] >= ms[2]


def test_jacobian_divergence_free_is_one():
    c = _cloud(0.05, 0.5)
    f = integrate_flow(rotation_field(), c, 0.0, 1.0, 0.01)
    jt = jacobian_track(rotation_field(), f)
    np.testing.assert_allclose(jt.jx_exp, 1.0)
    assert jt.max_discrepancy() <= 1e-8


def test_jacobian_linear():
    c = _cloud(0.05, 0.25)
    f = integrate_flow(linear_field(), c, 0.0, 1.0, 0.01)
    jt = jacobian_track(linear_field(), f)
    np.testing.assert_allclose(jt.jx_exp[-1], np.e ** 2, rtol=1e-12)
    assert jt.max_discrepancy() <= 1e-6


def test_jacobian_sine():
    c = _cloud(0.02, 0.5)
    f = integrate_flow(sine_field(), c, 0.0, 1.0, 0.01)
    assert jacobian_track(sine_field(), f).max_discrepancy() <= 1e-3


def test_jacobian_track_csv():
    c = _cloud(0.5, 0.5)
    f = integrate_flow(zero_field(), c, 0.0, 0.2, 0.1)
    text = jacobian_track(zero_field(), f).to_csv(c.labels)
    assert text.splitlines()[0] == "particle_id,t,jx_exp,jx_fd"


def test_semigroup_zero_field():
    assert semigroup_residual(zero_field(), _cloud(0.1), 0.3, 0.4, 0.1).residual == 0


def test_semigroup_rotation():
    res = semigroup_residual(rotation_field(), _cloud(0.1, 1.5), 0.5, 0.7, 0.01)
    assert res.residual <= 1e-5
    assert res.used > 0


def test_semigroup_linear():
    res = semigroup_residual(linear_field(), _cloud(0.1, 1.5), 0.3, 0.2, 0.01)
    assert res.residual <= 1e-6


def test_semigroup_sine_halves_with_refinement():
    r = [semigroup_residual(sine_field(), _cloud(h, 1.5), 0.5, 0.5, dt).residual
         for h, dt in ((0.1, 0.02), (0.05, 0.01), (0.025, 0.005))]
    assert r[1] <= 0.5 * r[0] and r[2] <= 0.5 * r[1]


def test_semigroup_rejects_non_autonomous():
    from artifact.bv_fields import analytic_field
    f = analytic_field(lambda t, X: t * X, autonomous=False)
    with pytest.raises(ConfigurationError):
        semigroup_residual(f, _cloud(), 0.1, 0.1, 0.1)


def test_counterexample_rules_agree_before_collision():
    c = ParticleCloud.lattice([-1, 0.5], [1, 1], 0.05)
    a = counterexample_flows(c, 0.1, "A")
    b = counterexample_flows(c, 0.1, "B")
    np.testing.assert_array_equal(a.positions, b.positions)


def test_counterexample_rules_disagree_after_collision():
    x = np.array([[0.2, 0.4]])
    pa = counterexample_positions(x, 0.2, "A")
    pb = counterexample_positions(x, 0.2, "B")
    # the inner particle hits the origin at t* = 0.08 and leaves on mirrored lines
    assert pa[0, 1] == pytest.approx(pb[0, 1])
    assert pa[0, 0] == pytest.approx(-pb[0, 0])
    assert pa[0, 0] != 0


def test_counterexample_solves_ode():
    c = ParticleCloud.lattice([-1.5, -1.5], [1.5, 1.5], 0.1)
    for rule in "AB":
        assert counterexample_ode_residual(counterexample_flows(c, 1.0, rule)) <= 1e-10


def test_counterexample_densities_near_one():
    c = ParticleCloud.lattice([-2, -2], [2, 2], 0.005)
    f = counterexample_flows(c, 0.5, "A", n_times=2)
    rep = compressibility(f, ScalarGrid.box([-1, -1], [1, 1], 0.25), [-1])
    assert 0.9 <= rep.densities.min() and rep.densities.max() <= 1.1


def test_counterexample_rejects_singular_line():
    with pytest.raises(DomainError):
        counterexample_positions([[0.3, 0.0]], 0.1)
    with pytest.raises(ConfigurationError):
        counterexample_positions([[0.3, 0.2]], 0.1, "C")


def test_flow_csv_header():
    c = _cloud(0.5, 0.5)
    text = integrate_flow(zero_field(), c, 0.0, 0.2, 0.1).to_csv()
    assert text.splitlines()[0] == "particle_id,t,x1,x2"
    assert len(text.splitlines()) == 1 + 3 * c.n
