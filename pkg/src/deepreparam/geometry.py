"""Sampled curves and surfaces, stencil derivatives and continuous interpolants.

Curves are sampled on ``K`` equispaced nodes of ``[0, 1]`` (endpoints
included), surfaces on a ``K x K`` tensor grid of ``[0, 1]^2``.  Surface
samples are stored as ``values[i, j] = f(x_i, y_j)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateSurface, InvalidGrid

DEGENERACY_TOL = 1e-12
MIN_NODES = 4
KEYS_A = -0.5


def uniform_nodes(K):
    return np.linspace(0.0, 1.0, K)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_nodes(nodes, K):
    nodes = np.asarray(nodes, dtype=float)
    if nodes.shape != (K,):
        raise InvalidGrid(f"expected {K} nodes, got shape {nodes.shape}")
    expected = uniform_nodes(K)
    if np.max(np.abs(nodes - expected)) > 1e-12 * max(1.0, K):
        raise InvalidGrid("nodes must be equispaced on [0, 1] including both endpoints")


@dataclass(frozen=True)
class SampledCurve:
    """Curve ``[0, 1] -> R^d`` sampled on ``K`` uniform nodes.

    ``values`` has shape ``(K, d)``; a 1-D array is treated as ``d = 1``.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise InvalidGrid(f"curve samples must be (K, d), got shape {v.shape}")
        if v.shape[0] < MIN_NODES:
            raise InvalidGrid(f"need at least {MIN_NODES} nodes, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise InvalidGrid("curve samples must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_nodes(cls, nodes, values):
        values = np.asarray(values, dtype=float)
        _check_nodes(nodes, values.shape[0])
        return cls(values)

    @classmethod
    def from_function(cls, func, K):
        """Sample a vectorized ``func(t) -> (K, d)`` on ``K`` nodes."""
        return cls(np.asarray(func(uniform_nodes(K)), dtype=float))

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def nodes(self):
        return uniform_nodes(self.K)

    @property
    def spacing(self):
        return 1.0 / (self.K - 1)


@dataclass(frozen=True)
class SampledSurface:
    """Surface ``[0, 1]^2 -> R^3`` sampled on a ``K x K`` grid, shape ``(K, K, 3)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[2] != 3 or v.shape[0] != v.shape[1]:
            raise InvalidGrid(f"surface samples must be (K, K, 3), got shape {v.shape}")
        if v.shape[0] < MIN_NODES:
            raise InvalidGrid(f"need at least {MIN_NODES} nodes per axis, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise InvalidGrid("surface samples must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_function(cls, func, K):
        """Sample ``func(x, y) -> (..., 3)`` on the ``K x K`` grid (``ij`` indexing)."""
        X, Y = grid_points(K)
        return cls(np.asarray(func(X, Y), dtype=float))

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def nodes(self):
        return uniform_nodes(self.K)

    @property
    def spacing(self):
        return 1.0 / (self.K - 1)


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image, ``intensities[row, col]`` in ``[0, 1]``."""

    intensities: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.intensities, dtype=float)
        if a.ndim != 2:
            raise InvalidGrid(f"image must be 2-D, got shape {a.shape}")
        if a.shape[0] < MIN_NODES or a.shape[1] < MIN_NODES:
            raise InvalidGrid(f"image must be at least {MIN_NODES}x{MIN_NODES}, got {a.shape[1]}x{a.shape[0]}")
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            raise InvalidGrid("intensities must be finite and within [0, 1]")
        object.__setattr__(self, "intensities", _frozen(a))

    @property
    def width(self):
        return self.intensities.shape[1]

    @property
    def height(self):
        return self.intensities.shape[0]


def grid_points(K):
    """Meshgrid ``(X, Y)`` of the ``K x K`` grid with ``X[i, j] = x_i``."""
    t = uniform_nodes(K)
    return np.meshgrid(t, t, indexing="ij")


def finite_diff_derivative(curve):
    """Second-order stencil derivative of a sampled curve, shape ``(K, d)``.

    Central differences in the interior, one-sided second-order differences
    at the two endpoints.
    """
    return np.gradient(curve.values, curve.spacing, axis=0, edge_order=2)


def partials_surface(surface):
    """Second-order stencil partials ``(f_x, f_y)`` of a sampled surface."""
    h = surface.spacing
    fx = np.gradient(surface.values, h, axis=0, edge_order=2)
    fy = np.gradient(surface.values, h, axis=1, edge_order=2)
    return fx, fy


def area_factor(surface, tol=DEGENERACY_TOL):
    """Area scaling factor ``|f_x x f_y|`` and unit normals of a sampled surface.

    Normals are NaN where the area factor does not exceed ``tol``.  Raises
    :class:`DegenerateSurface` if that happens at an interior node; boundary
    degeneracy only warns.
    """
    fx, fy = partials_surface(surface)
    cross = np.cross(fx, fy)
    a = np.linalg.norm(cross, axis=-1)
    bad = a <= tol
    if bad[1:-1, 1:-1].any():
        i, j = np.argwhere(bad[1:-1, 1:-1])[0] + 1
        raise DegenerateSurface(f"area factor {a[i, j]:.3g} at interior node ({i}, {j})")
    if bad.any():
        warnings.warn("area factor vanishes at boundary nodes", RuntimeWarning, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = np.where(bad[..., None], np.nan, cross / a[..., None])
    return a, normals


# -- interpolation ---------------------------------------------------------


class CurveInterpolant:
    """Natural cubic spline through uniformly sampled vector data on ``[0, 1]``."""

    kind = "cubic-spline"
    dim = 1

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        self.nodes = uniform_nodes(values.shape[0])
        self._spline = CubicSpline(self.nodes, values, axis=0, bc_type="natural")
        self._dspline = self._spline.derivative()

    def __call__(self, t):
        return self._spline(np.clip(t, 0.0, 1.0))

    def derivative(self, t):
        return self._dspline(np.clip(t, 0.0, 1.0))

    def evaluate(self, t):
        """Values and first derivatives at ``t``, each of shape ``t.shape + (d,)``."""
        t = np.clip(t, 0.0, 1.0)
        return self._spline(t), self._dspline(t)


def keys_kernel(s, a=KEYS_A):
    s = np.abs(s)
    s2, s3 = s * s, s * s * s
    inner = (a + 2) * s3 - (a + 3) * s2 + 1
    outer = a * s3 - 5 * a * s2 + 8 * a * s - 4 * a
    return np.where(s <= 1, inner, np.where(s < 2, outer, 0.0))


def keys_kernel_derivative(s, a=KEYS_A):
    sign = np.sign(s)
    s = np.abs(s)
    inner = 3 * (a + 2) * s * s - 2 * (a + 3) * s
    outer = 3 * a * s * s - 10 * a * s + 8 * a
    return sign * np.where(s <= 1, inner, np.where(s < 2, outer, 0.0))


def _pad_axis(data, axis, boundary):
    d = np.moveaxis(data, axis, 0)
    if boundary == "replicate":
        lo, hi = d[0], d[-1]
    elif boundary == "keys":
        # Keys' extrapolation; exact for quadratic data
        lo = 3 * d[0] - 3 * d[1] + d[2]
        hi = 3 * d[-1] - 3 * d[-2] + d[-3]
    else:
        raise ValueError(f"unknown boundary rule {boundary!r}")
    out = np.concatenate([lo[None], d, hi[None]], axis=0)
    return np.moveaxis(out, 0, axis)


class GridInterpolant:
    """Bicubic convolution (Keys kernel) of vector data on a uniform grid of ``[0, 1]^2``.

    ``values`` has shape ``(Kx, Ky, C)`` with ``values[i, j]`` sampled at
    ``(x_i, y_j)``.  The interpolant is C^1 and reproduces the samples at the
    nodes.  ``boundary`` selects the ghost-node rule: ``"keys"`` (cubic
    convolution boundary extrapolation, exact on quadratics) or
    ``"replicate"`` (border padding).
    """

    kind = "bicubic-convolution"
    dim = 2

    def __init__(self, values, a=KEYS_A, boundary="keys"):
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[..., None]
        if values.shape[0] < MIN_NODES or values.shape[1] < MIN_NODES:
            raise InvalidGrid(f"need at least {MIN_NODES} nodes per axis")
        self.values = values
        self.a = a
        self.boundary = boundary
        self._padded = _pad_axis(_pad_axis(values, 0, boundary), 1, boundary)

    def _axis_weights(self, x, n):
        u = np.clip(x, 0.0, 1.0) * (n - 1)
        i = np.clip(np.floor(u).astype(int), 0, n - 2)
        t = u - i
        offs = np.array([-1.0, 0.0, 1.0, 2.0])
        s = t[:, None] - offs[None, :]
        w = keys_kernel(s, self.a)
        dw = keys_kernel_derivative(s, self.a) * (n - 1)
        return i, w, dw

    def evaluate(self, points):
        """Values ``(n, C)`` and Jacobians ``(n, C, 2)`` at points of shape ``(n, 2)``."""
        points = np.asarray(points, dtype=float)
        Kx, Ky = self.values.shape[:2]
        ix, wx, dwx = self._axis_weights(points[:, 0], Kx)
        iy, wy, dwy = self._axis_weights(points[:, 1], Ky)
        taps = np.arange(4)
        # padded index i + tap corresponds to original node i - 1 + tap
        patch = self._padded[(ix[:, None] + taps)[:, :, None], (iy[:, None] + taps)[:, None, :]]
        vals = np.einsum("na,nb,nabc->nc", wx, wy, patch)
        gx = np.einsum("na,nb,nabc->nc", dwx, wy, patch)
        gy = np.einsum("na,nb,nabc->nc", wx, dwy, patch)
        return vals, np.stack([gx, gy], axis=-1)

    def __call__(self, points):
        return self.evaluate(points)[0]

    def derivative(self, points):
        return self.evaluate(points)[1]


def make_interpolant(samples, **kwargs):
    """Continuous C^1 evaluator for sampled data.

    Accepts a :class:`SampledCurve`, a :class:`SampledSurface` or a raw array:
    ``(K,)`` / ``(K, d)`` arrays give a cubic spline, ``(Kx, Ky, C)`` arrays a
    bicubic convolution interpolant.
    """
    if isinstance(samples, SampledCurve):
        return CurveInterpolant(samples.values)
    if isinstance(samples, SampledSurface):
        return GridInterpolant(samples.values, **kwargs)
    arr = np.asarray(samples, dtype=float)
    if arr.ndim in (1, 2):
        return CurveInterpolant(arr)
    if arr.ndim == 3:
        return GridInterpolant(arr, **kwargs)
    raise InvalidGrid(f"cannot interpolate samples of shape {arr.shape}")


def lift_image(img, K, boundary="keys"):
    """Graph surface ``(x, y, I(x, y))`` of an image resampled on a ``K x K`` grid.

    Pixel centres sit at ``x = col / (W - 1)`` and ``y = row / (H - 1)``, so
    with ``K`` equal to the image size the lift reproduces the pixels.
    """
    if K < MIN_NODES:
        raise InvalidGrid(f"grid size must be at least {MIN_NODES}")
    interp = GridInterpolant(img.intensities.T[..., None], boundary=boundary)
    X, Y = grid_points(K)
    z = interp(np.column_stack([X.ravel(), Y.ravel()]))[:, 0].reshape(K, K)
    return SampledSurface(np.stack([X, Y, z], axis=-1))
