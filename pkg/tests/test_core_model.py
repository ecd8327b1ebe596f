import numpy as np
import pytest

from artifact.core_model import (
    ConfigurationError,
    DirectionFn,
    DiscreteMeasure,
    DomainError,
    LevelCurve,
    Point,
    ScalarGrid,
    VectorMeasure,
    geometric_grid,
    level_curve,
    measure_total_variation,
    superlevel_measure,
)


def test_total_variation_unit_dirac():
    assert measure_total_variation(DiscreteMeasure.dirac()) == 1.0


def test_total_variation_signed_atoms():
    mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [1.0, -2.0])
    assert measure_total_variation(mu) == pytest.approx(3.0)


def test_total_variation_uniform_density():
    h = 0.01
    d = ScalarGrid.box([0, 0], [1, 1], h, np.ones((100, 100)))
    mu = DiscreteMeasure(np.zeros((0, 2)), [], d)
    assert abs(measure_total_variation(mu) - 1.0) <= h


def test_superlevel_constant():
    g = ScalarGrid.box([0, 0], [1, 1], 0.01, np.full((100, 100), 2.0))
    assert superlevel_measure(g, 1.0) == pytest.approx(1.0)
    assert superlevel_measure(g, 3.0) == 0.0


def test_superlevel_half_square():
    h = 0.01
    g = ScalarGrid.from_function(lambda X: X[:, 0], [0, 0], [1, 1], h)
    assert abs(superlevel_measure(g, 0.5) - 0.5) <= 2 * h


def test_superlevel_rejects_nonpositive_lambda():
    g = ScalarGrid.box([0], [1], 0.1)
    with pytest.raises(DomainError):
        superlevel_measure(g, 0.0)


def test_level_curve_zero_and_constant():
    g = ScalarGrid.box([0, 0], [1, 1], 0.1)
    assert np.all(level_curve(g, [1, 2, 4]).values == 0)
    one = g.with_values(np.ones(g.extents))
    assert level_curve(one, [2.0]).values[0] == 0


def test_level_curve_of_inverse_distance():
    h = 1e-5
    g = ScalarGrid.from_function(lambda X: 1 / (2 * np.abs(X[:, 0])), [-2], [2], h)
    vals = level_curve(g, [1, 2, 4]).values
    np.testing.assert_allclose(vals, 1.0, atol=0.01)


def test_level_curve_grid_validation():
    g = ScalarGrid.box([0], [1], 0.1)
    with pytest.raises(ConfigurationError):
        level_curve(g, [])
    with pytest.raises(ConfigurationError):
        level_curve(g, [2.0, 1.0])


def test_level_curve_csv_roundtrip():
    lc = LevelCurve(np.array([1.0, 2.0]), np.array([0.5, 0.25]))
    back = LevelCurve.from_csv(lc.to_csv())
    np.testing.assert_array_equal(back.values, lc.values)


def test_point_rejects_nan():
    with pytest.raises(DomainError):
        Point([np.nan, 0.0])


def test_measure_validation():
    with pytest.raises(ConfigurationError):
        DiscreteMeasure([[0.0, 0.0]], [1.0, 2.0])
    with pytest.raises(DomainError):
        DiscreteMeasure([[np.inf, 0.0]], [1.0])


def test_measure_plus_concatenates_atoms():
    mu = DiscreteMeasure.dirac().plus(DiscreteMeasure.dirac([1.0, 0.0], 0.5))
    assert measure_total_variation(mu) == pytest.approx(1.5)


def test_vector_measure_unit_structure():
    with pytest.raises(DomainError):
        VectorMeasure((DiscreteMeasure.dirac(), DiscreteMeasure.dirac()), xi=np.array([[2.0, 0.0]]))


def test_geometric_grid_anchor():
    g = geometric_grid(0.1, 1.0, 8)
    assert g[0] >= 0.1 and g[-1] <= 1.0 + 1e-12
    np.testing.assert_allclose(np.diff(np.log2(g)), 1 / 8)


def test_direction_fn_mean():
    f = DirectionFn.from_function(np.cos, 64)
    assert abs(f.mean) < 1e-14
