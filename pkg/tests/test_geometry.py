import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepreparam.errors import DegenerateSurface, InvalidGrid
from deepreparam.geometry import (
    GrayImage,
    GridInterpolant,
    SampledCurve,
    SampledSurface,
    area_factor,
    finite_diff_derivative,
    grid_points,
    keys_kernel,
    keys_kernel_derivative,
    lift_image,
    make_interpolant,
    partials_surface,
    uniform_nodes,
)


def test_curve_requires_four_nodes():
    with pytest.raises(InvalidGrid):
        SampledCurve(np.zeros((3, 2)))


def test_curve_rejects_nonuniform_nodes():
    t = np.array([0.0, 0.2, 0.5, 1.0])
    with pytest.raises(InvalidGrid):
        SampledCurve.from_nodes(t, np.zeros((4, 2)))


def test_curve_values_are_read_only():
    c = SampledCurve(np.zeros((5, 2)))
    with pytest.raises(ValueError):
        c.values[0, 0] = 1.0


def test_derivative_of_line_is_exact():
    c = SampledCurve.from_function(lambda t: np.stack([t, 0 * t], -1), 11)
    np.testing.assert_allclose(finite_diff_derivative(c), np.tile([1.0, 0.0], (11, 1)), atol=1e-12)


def test_derivative_of_figure_eight():
    K = 1024
    t = uniform_nodes(K)
    c = SampledCurve(np.stack([np.cos(2 * np.pi * t), np.sin(4 * np.pi * t)], -1))
    exact = np.stack([-2 * np.pi * np.sin(2 * np.pi * t), 4 * np.pi * np.cos(4 * np.pi * t)], -1)
    assert np.max(np.abs(finite_diff_derivative(c) - exact)) < 1e-3


def test_derivative_of_constant_is_zero():
    c = SampledCurve(np.ones((8, 2)))
    np.testing.assert_array_equal(finite_diff_derivative(c), 0.0)


def test_derivative_converges_at_second_order():
    def err(K):
        t = uniform_nodes(K)
        c = SampledCurve(np.stack([np.sin(3 * t), np.exp(t)], -1))
        exact = np.stack([3 * np.cos(3 * t), np.exp(t)], -1)
        return np.max(np.abs(finite_diff_derivative(c) - exact))

    for K in (64, 128, 256):
        assert err(2 * K - 1) <= err(K) / 3.5


def test_partials_of_plane():
    s = SampledSurface.from_function(lambda x, y: np.stack([x, y, 0 * x], -1), 6)
    fx, fy = partials_surface(s)
    np.testing.assert_allclose(fx, np.broadcast_to([1.0, 0, 0], fx.shape), atol=1e-12)
    np.testing.assert_allclose(fy, np.broadcast_to([0, 1.0, 0], fy.shape), atol=1e-12)


def test_partials_of_paraboloid():
    K = 256
    s = SampledSurface.from_function(lambda x, y: np.stack([x, y, x**2 + y**2], -1), K)
    fx, fy = partials_surface(s)
    X, Y = grid_points(K)
    assert np.max(np.abs(fx[..., 2] - 2 * X)) < 1e-3
    assert np.max(np.abs(fy[..., 2] - 2 * Y)) < 1e-3


def test_partials_on_minimal_grid():
    s = SampledSurface.from_function(lambda x, y: np.stack([x, y, np.sin(x * y)], -1), 4)
    fx, fy = partials_surface(s)
    assert np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))


def test_area_factor_of_flat_square():
    s = SampledSurface.from_function(lambda x, y: np.stack([x, y, 0 * x], -1), 8)
    a, n = area_factor(s)
    np.testing.assert_allclose(a, 1.0)
    np.testing.assert_allclose(n, np.broadcast_to([0, 0, 1.0], n.shape))


def test_area_factor_of_stretched_plane():
    s = SampledSurface.from_function(lambda x, y: np.stack([2 * x, y, 0 * x], -1), 8)
    a, _ = area_factor(s)
    np.testing.assert_allclose(a, 2.0)


def test_area_factor_of_saddle():
    K = 128
    s = SampledSurface.from_function(lambda x, y: np.stack([x, y, x**2 - y**2], -1), K)
    a, _ = area_factor(s)
    X, Y = grid_points(K)
    assert np.max(np.abs(a - np.sqrt(1 + 4 * X**2 + 4 * Y**2))) < 1e-3


def test_degenerate_interior_raises():
    s = SampledSurface.from_function(lambda x, y: np.stack([x, 0 * y, 0 * x], -1), 6)
    with pytest.raises(DegenerateSurface):
        area_factor(s)


def test_degenerate_boundary_only_warns():
    # f(x, y) = (x, x y, 0) collapses the edge x = 0
    s = SampledSurface.from_function(lambda x, y: np.stack([x, x * y, 0 * x], -1), 8)
    with pytest.warns(RuntimeWarning):
        a, n = area_factor(s)
    assert np.all(a[1:-1, 1:-1] > 0)
    assert np.isnan(n[0]).all()


@given(st.floats(0.2, 0.8), st.floats(-0.3, 0.3))
def test_reparametrized_flat_patch_keeps_positive_area(scale, shear):
    def f(x, y):
        u = x + scale * 0.1 * np.sin(np.pi * x)
        v = y + shear * 0.1 * np.sin(np.pi * y) * np.cos(np.pi * x)
        return np.stack([u, v, 0 * x], -1)

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a, _ = area_factor(SampledSurface.from_function(f, 16))
    assert np.all(a > 0)


def test_image_bounds():
    with pytest.raises(InvalidGrid):
        GrayImage(np.zeros((3, 5)))
    with pytest.raises(InvalidGrid):
        GrayImage(np.full((4, 4), 1.5))


def test_spline_matches_sine():
    interp = make_interpolant(np.sin(np.pi * uniform_nodes(64)))
    assert abs(interp(0.37)[0] - np.sin(np.pi * 0.37)) < 1e-6


def test_spline_linear_slope():
    interp = make_interpolant(SampledCurve(np.stack([uniform_nodes(10) * 3 - 1, uniform_nodes(10)], -1)))
    d = interp.derivative(np.linspace(0, 1, 37))
    np.testing.assert_allclose(d, np.broadcast_to([3.0, 1.0], d.shape), atol=1e-10)


@given(st.integers(4, 40), st.integers(0, 2**32 - 1))
def test_spline_reproduces_nodes(K, seed):
    vals = np.random.default_rng(seed).normal(size=(K, 2))
    interp = make_interpolant(vals)
    out = interp(uniform_nodes(K))
    assert np.all(np.abs(out - vals) <= 1e-12 * (1 + np.abs(vals)))


@given(st.floats(-3, 3))
def test_keys_kernel_partition_of_unity(shift):
    t = shift - np.floor(shift)
    taps = t - np.array([-1.0, 0.0, 1.0, 2.0])
    assert abs(keys_kernel(taps).sum() - 1.0) < 1e-12
    assert abs(keys_kernel_derivative(taps).sum()) < 1e-12


def test_keys_kernel_nodes():
    np.testing.assert_allclose(keys_kernel(np.array([0.0, 1.0, 2.0, -1.0, 2.5])), [1, 0, 0, 0, 0], atol=1e-15)


@pytest.mark.parametrize("boundary", ["keys", "replicate"])
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(4, 12))
def test_grid_interpolant_reproduces_nodes(boundary, seed, K):
    vals = np.random.default_rng(seed).normal(size=(K, K, 3))
    X, Y = grid_points(K)
    out = GridInterpolant(vals, boundary=boundary)(np.column_stack([X.ravel(), Y.ravel()]))
    assert np.all(np.abs(out - vals.reshape(-1, 3)) <= 1e-12 * (1 + np.abs(vals.reshape(-1, 3))))


def test_grid_interpolant_exact_on_quadratics():
    K = 9
    X, Y = grid_points(K)
    f = lambda x, y: 1 + 2 * x - y + 0.5 * x * x + 0.3 * x * y - 0.7 * y * y  # noqa: E731
    interp = GridInterpolant(f(X, Y)[..., None])
    pts = np.random.default_rng(0).random((200, 2))
    vals, jac = interp.evaluate(pts)
    np.testing.assert_allclose(vals[:, 0], f(pts[:, 0], pts[:, 1]), atol=1e-12)
    np.testing.assert_allclose(jac[:, 0, 0], 2 + pts[:, 0] + 0.3 * pts[:, 1], atol=1e-10)
    np.testing.assert_allclose(jac[:, 0, 1], -1 + 0.3 * pts[:, 0] - 1.4 * pts[:, 1], atol=1e-10)


def test_grid_interpolant_jacobian_matches_differences():
    vals = np.random.default_rng(1).normal(size=(7, 7, 2))
    interp = GridInterpolant(vals)
    p = np.array([[0.31, 0.62], [0.05, 0.93]])
    h = 1e-6
    _, jac = interp.evaluate(p)
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (interp(p + e) - interp(p - e)) / (2 * h)
        np.testing.assert_allclose(jac[:, :, d], fd, atol=1e-6)


def test_lift_constant_image():
    s = lift_image(GrayImage(np.full((5, 7), 0.5)), 16)
    np.testing.assert_allclose(s.values[..., 2], 0.5, atol=1e-14)


def test_lift_checkerboard_at_pixel_centres():
    board = (np.add.outer(np.arange(4), np.arange(4)) % 2).astype(float)
    s = lift_image(GrayImage(board), 4)
    # rows are y, columns are x
    np.testing.assert_allclose(s.values[..., 2], board.T, atol=1e-12)


def test_lift_linear_ramp():
    W = H = 12
    img = GrayImage(np.tile(np.linspace(0, 1, W), (H, 1)))
    s = lift_image(img, 33)
    X, _ = grid_points(33)
    assert np.max(np.abs(s.values[..., 2] - X)) < 1e-10


def test_lift_with_replicate_padding_reproduces_pixels():
    img = GrayImage(np.random.default_rng(3).random((6, 6)))
    s = lift_image(img, 6, boundary="replicate")
    np.testing.assert_allclose(s.values[..., 2], img.intensities.T, atol=1e-12)
