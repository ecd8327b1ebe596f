import numpy as np
import pytest

from artifact.core_model import ConfigurationError, DirectionFn, DiscreteMeasure, DomainError, ScalarGrid
from artifact.oracles import nested_composite_oracle, riesz_square_multiplier_oracle
from artifact.singular_ops import (
    RoughKernel,
    bump_integrals,
    build_bump_pair,
    cancellation_sup,
    composite_sup_op,
    default_annuli,
    difference_representation,
    kakeya_singular,
    make_kernel,
    maximal_truncated,
    unnormalized_riesz_kernel,
    riesz_squared_kernel,
    smooth_direction,
    smoothstep,
    sphere_seminorm,
    truncated_convolution,
)


def _gauss(s):
    return lambda X: np.exp(-np.sum(X ** 2, -1) / (2 * s * s))


def _radial_bump(Y):
    return smoothstep(2 * (1 - np.linalg.norm(Y, axis=-1)))


# ---------------------------------------------------------------- seminorm


def test_seminorm_zero():
    assert sphere_seminorm(DirectionFn(np.zeros(64)), 0.5) == 0


def test_seminorm_constant_is_annulus_volume():
    assert sphere_seminorm(DirectionFn(np.ones(256)), 0.5) == pytest.approx(3 * np.pi, rel=0.01)


def test_seminorm_cos_refinement():
    a = sphere_seminorm(DirectionFn.from_function(np.cos, 128), 0.5)
    b = sphere_seminorm(DirectionFn.from_function(np.cos, 1280), 0.5)
    assert a == pytest.approx(b, rel=0.01)


# ---------------------------------------------------------------- cancellation


def test_cancellation_odd_omega():
    k = RoughKernel(DirectionFn.from_function(np.sin, 256))
    assert cancellation_sup(k, default_annuli()) <= 1e-12


def test_cancellation_riesz_squared():
    assert cancellation_sup(riesz_squared_kernel(1), default_annuli(20)) <= 1e-10


def test_cancellation_constant_omega():
    k = RoughKernel(DirectionFn(np.ones(256)))
    assert cancellation_sup(k, [(1.0, np.e)]) == pytest.approx(2 * np.pi, rel=0.01)


def test_make_kernel_rejects_mean():
    with pytest.raises(DomainError):
        make_kernel(DirectionFn(np.ones(64)))


# ---------------------------------------------------------------- smoothing


def test_smooth_direction_smooth_input():
    om = DirectionFn.from_function(np.cos, 1024)
    diff = np.abs(smooth_direction(om, 1000).samples - om.samples).max()
    assert diff < 1e-3


def test_smooth_direction_jump_seminorm_decreases():
    om = DirectionFn.from_function(lambda th: np.sign(np.sin(th)), 1024)
    d = [sphere_seminorm(DirectionFn(smooth_direction(om, n).samples - om.samples), 0.5) for n in (4, 16, 64)]
    assert d[0] > d[1] > d[2]


def test_smooth_direction_keeps_mean_zero():
    om = DirectionFn.from_function(lambda th: np.sign(np.sin(th + 0.01)) + 0.3 * np.cos(3 * th), 512)
    assert abs(om.mean) <= 1e-14
    assert abs(smooth_direction(om, 8).mean) <= 1e-14


# ---------------------------------------------------------------- truncated convolution


def test_truncated_zero_input():
    g = ScalarGrid.box([-1, -1], [1, 1], 1 / 16)
    assert np.all(truncated_convolution(riesz_squared_kernel(1), g, 1 / 32).values == 0)


def test_truncated_matches_multiplier_oracle():
    N, h = 256, 2 / 256
    g = ScalarGrid.from_function(_gauss(0.1), [-1, -1], [1, 1], h)
    out = truncated_convolution(riesz_squared_kernel(1), g, h / 2).values
    ref = riesz_square_multiplier_oracle(g, 1)
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) <= 1e-2


def test_truncated_point_mass():
    k = riesz_squared_kernel(1)
    x = np.array([[np.cos(0.3), np.sin(0.3)]])
    v = truncated_convolution(k, DiscreteMeasure.dirac(), 0.5, x)
    assert v[0] == pytest.approx(float(k(x)[0]), rel=1e-14)


def test_truncated_fft_matches_direct():
    g = ScalarGrid.from_function(_gauss(0.2), [-1, -1], [1, 1], 1 / 16)
    k = riesz_squared_kernel(2)
    a = truncated_convolution(k, g, 1 / 32, method="fft").values
    b = truncated_convolution(k, g, 1 / 32, method="direct").values
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_truncated_rejects_bad_eps():
    with pytest.raises(DomainError):
        truncated_convolution(riesz_squared_kernel(1), DiscreteMeasure.dirac(), 0.0, [[1.0, 0.0]])


def test_maximal_truncated_dominates():
    k = riesz_squared_kernel(1)
    rng = np.random.default_rng(2)
    mu = DiscreteMeasure(rng.uniform(-1, 1, (10, 2)), rng.uniform(-1, 1, 10))
    x = rng.uniform(-1, 1, (30, 2))
    eps = [0.05, 0.1, 0.2, 0.4]
    m = maximal_truncated(k, mu, x, eps)
    for e in eps:
        assert np.all(m >= np.abs(truncated_convolution(k, mu, e, x)) - 1e-15)
    assert np.all(maximal_truncated(k, DiscreteMeasure.zero(), x, eps) == 0)
    with pytest.raises(ConfigurationError):
        maximal_truncated(k, mu, x, [])


def test_maximal_truncated_dirac_plateau():
    # |K_1| = |cos 2th| / (2 pi r^2), so lam * |{|K_1| > lam}| = mean|cos 2th| / 2 for every lam
    k = riesz_squared_kernel(1)
    g = ScalarGrid.box([-1, -1], [1, 1], 0.005)
    v = g.with_values(maximal_truncated(k, DiscreteMeasure.dirac(), g.centers(), [1e-3]))
    lams = [4.0, 16.0, 64.0]
    vals = [lam * np.count_nonzero(v.values > lam) * g.cell_volume for lam in lams]
    th = (np.arange(4096) + 0.5) * 2 * np.pi / 4096
    exact = np.mean(np.abs(np.cos(2 * th))) / 2
    np.testing.assert_allclose(vals, exact, rtol=0.05)


# ---------------------------------------------------------------- composite operator


def test_composite_zero_input():
    g = ScalarGrid.box([-1, -1], [1, 1], 1 / 32)
    out = composite_sup_op(riesz_squared_kernel(1), [_radial_bump], 1.0, [0.25], g)
    assert np.all(out.values == 0)


def test_composite_matches_nested_quadrature():
    k = riesz_squared_kernel(1)
    fn = _gauss(0.2)
    f = ScalarGrid.from_function(fn, [-2, -2], [2, 2], 1 / 64)
    out = composite_sup_op(k, [_radial_bump], 1.0, [0.25], f)
    C = f.centers()
    idx = [int(np.argmin(np.linalg.norm(C - p, axis=1))) for p in [(0.1, 0.05), (0.3, 0.0), (0.2, 0.25)]]
    ref = np.abs(nested_composite_oracle(k.exact, fn, _radial_bump, 1.0, 0.25, C[idx]))
    np.testing.assert_allclose(out.values.ravel()[idx], ref, rtol=1e-2)


def test_composite_is_homogeneous():
    k = riesz_squared_kernel(2)
    f = ScalarGrid.from_function(_gauss(0.2), [-1, -1], [1, 1], 1 / 32)
    a = composite_sup_op(k, [_radial_bump], 0.5, [0.2, 0.4], f).values
    b = composite_sup_op(k, [_radial_bump], 0.5, [0.2, 0.4], f.with_values(2 * f.values)).values
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- kakeya singular


def test_kakeya_singular_zero():
    v = kakeya_singular(riesz_squared_kernel(1), 0.1, 1.0, 1.0, DiscreteMeasure.zero(), [[0.5, 0.0]])
    assert np.all(v == 0)


def test_kakeya_singular_dirac_blowup():
    x = np.array([[0.5, 0.0], [0.3, 0.3], [0.0, -0.4]])
    K1, K2 = unnormalized_riesz_kernel(1), unnormalized_riesz_kernel(2)
    lower = []
    for eps in (0.4, 0.2, 0.1, 0.05):
        s = kakeya_singular(K1, eps, 1.0, 1.0, DiscreteMeasure.dirac(), x) + \
            kakeya_singular(K2, eps, 1.0, 1.0, DiscreteMeasure.dirac(), x)
        lower.append((s * eps * np.sum(x ** 2, 1)).min())
    # the summed operator is at least C eps^{-1} |x|^{-2} with one C for every eps
    assert min(lower) > 0.1 * max(lower) > 0


def test_kakeya_singular_line_measure_bounded():
    hl = 0.005
    ys = np.arange(-1, 1, hl) + hl / 2
    mu = DiscreteMeasure(np.stack([np.zeros_like(ys), ys], 1), smoothstep(2 - 2 * np.abs(ys)) * hl)
    rng = np.random.default_rng(1)
    X = rng.uniform(-0.6, 0.6, (400, 2))
    X = X[np.abs(X[:, 0]) >= 0.2][:40]
    lams = np.geomspace(0.1, 100, 31)
    stats = []
    for eps in (0.4, 0.2, 0.1, 0.05):
        v = kakeya_singular(riesz_squared_kernel(1), eps, 1.0, 0.5, mu, X)
        stats.append(max(lam * np.mean(v > lam) for lam in lams))
    assert max(stats) / min(stats) <= 2


# ---------------------------------------------------------------- bump pair


def test_bump_pair_support_and_sign():
    bp = build_bump_pair(1 / 128, [1.0, 0.0])
    rng = np.random.default_rng(0)
    z = rng.uniform(-1, 1, (10 ** 4, 2))
    z[: 5000] = np.stack([rng.uniform(0, 1, 5000), rng.uniform(-0.02, 0.02, 5000)], 1)
    t1 = bp.theta1(z)
    assert np.all(t1 >= 0)
    r = np.linalg.norm(z, axis=1)
    chord = np.linalg.norm(z / r[:, None] - bp.e, axis=1)
    assert np.all(t1[(r > 0.75) | (chord > bp.eps)] == 0)
    assert np.any(t1 > 0)


def test_bump_integral_stable_across_scales():
    a = bump_integrals(build_bump_pair(1 / 128, [1.0, 0.0]))[0]
    b = bump_integrals(build_bump_pair(1 / 256, [1.0, 0.0]))[0]
    assert 1 / 1.5 <= a / b <= 1.5


def test_bump_pair_rejects_large_eps():
    with pytest.raises(DomainError):
        build_bump_pair(0.1, [1.0, 0.0])


# ---------------------------------------------------------------- difference formula


def test_difference_constant_is_zero():
    v = difference_representation(lambda p: np.zeros_like(p), [0.3, 0.1], [-0.2, 0.0], 1 / 128, 128)
    assert v == 0


def test_difference_linear():
    v = difference_representation(lambda p: np.tile([1.0, 0.0], (len(p), 1)), [1, 0], [0, 0], 1 / 128, 512)
    assert v == pytest.approx(1.0, abs=1e-2)


def test_difference_gaussian_self_convergence():
    f = lambda q: np.exp(-np.sum(q ** 2, -1) / 0.5)
    gf = lambda q: -2 * q / 0.5 * f(q)[..., None]
    x, y = np.array([0.3, 0.1]), np.array([-0.2, 0.0])
    ex = f(x) - f(y)
    errs = [abs(difference_representation(gf, x, y, 1 / 128, n) - ex) for n in (128, 256, 512)]
    assert errs[0] >= 2 * errs[1] and errs[1] >= 2 * errs[2]
