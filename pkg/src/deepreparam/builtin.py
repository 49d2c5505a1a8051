"""Analytic test shapes with known reparametrizations."""
from __future__ import annotations

import numpy as np

from .diffeo import Basis2D, random_feasible_net
from .geometry import SampledCurve, SampledSurface, grid_points, uniform_nodes

SURFACE_WARP_SEED = 1234


def figure_eight(t):
    """``c(t) = (cos 2 pi t, sin 4 pi t)``."""
    t = np.asarray(t, dtype=float)
    return np.stack([np.cos(2 * np.pi * t), np.sin(4 * np.pi * t)], axis=-1)


def figure_eight_velocity(t):
    t = np.asarray(t, dtype=float)
    return np.stack([-2 * np.pi * np.sin(2 * np.pi * t), 4 * np.pi * np.cos(4 * np.pi * t)], axis=-1)


def log_tanh_warp(t):
    """``log(20 t + 1) / (2 log 21) + (1 + tanh(20 (t - 1/2))) / (4 tanh 10)``."""
    t = np.asarray(t, dtype=float)
    return np.log(20 * t + 1) / (2 * np.log(21)) + (1 + np.tanh(20 * (t - 0.5))) / (4 * np.tanh(10))


def log_tanh_warp_derivative(t):
    t = np.asarray(t, dtype=float)
    return 20 / ((20 * t + 1) * 2 * np.log(21)) + 20 / np.cosh(20 * (t - 0.5)) ** 2 / (4 * np.tanh(10))


def curve_pair(K=1024):
    """``(c o phi, c)`` for the figure-eight curve and the log/tanh warp.

    The optimizer should recover ``phi`` when the first curve is the target.
    """
    t = uniform_nodes(K)
    return SampledCurve(figure_eight(log_tanh_warp(t))), SampledCurve(figure_eight(t))


def paraboloid(x, y):
    """Graph of a tilted elliptic paraboloid; its Gauss map is injective."""
    z = 0.6 * (x - 0.4) ** 2 + 0.4 * (y - 0.55) ** 2 + 0.25 * (x - 0.4) * (y - 0.55) + 0.1 * x
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def surface_warp(N=2, layers=3, radius=0.9, seed=SURFACE_WARP_SEED, eps=1e-2):
    """Feasible synthetic 2-D warp with ``sum |w_n| L_n = radius`` per layer."""
    rng = np.random.default_rng(seed)
    return random_feasible_net(Basis2D(N), layers, rng, eps=eps, radius=radius)


def surface_pair(K=64, warp=None):
    """``(f o phi, f)`` for the paraboloid graph and a synthetic warp ``phi``."""
    warp = warp if warp is not None else surface_warp()
    X, Y = grid_points(K)
    pts = warp(np.column_stack([X.ravel(), Y.ravel()]))
    warped = paraboloid(pts[:, 0], pts[:, 1]).reshape(K, K, 3)
    return SampledSurface(warped), SampledSurface(paraboloid(X, Y)), warp


