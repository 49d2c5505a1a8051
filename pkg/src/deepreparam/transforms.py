"""Shape transforms (SRVT, Q, SRNF), pre-shape distances and interpolation paths."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import io
from .errors import DegenerateCurve, GridMismatch, VanishingCombination
from .geometry import (
    DEGENERACY_TOL,
    SampledCurve,
    SampledSurface,
    area_factor,
    finite_diff_derivative,
    grid_points,
    make_interpolant,
    partials_surface,
    uniform_nodes,
)

CURVE_KINDS = ("SRVT", "QCurve")
SURFACE_KINDS = ("SRNF", "QSurface")
DEFAULT_TAUS = tuple(np.linspace(0.0, 1.0, 11))


@dataclass(frozen=True)
class QMap:
    """Transformed shape sampled on the source grid.

    ``samples`` has shape ``(K, d)`` for curve transforms and ``(K, K, 3)``
    for surface transforms.
    """

    samples: np.ndarray
    kind: str
    _interp: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.kind not in CURVE_KINDS + SURFACE_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")

    @property
    def dim(self):
        return 1 if self.kind in CURVE_KINDS else 2

    @property
    def K(self):
        return self.samples.shape[0]

    @property
    def interpolant(self):
        if not self._interp:
            self._interp.append(make_interpolant(self.samples))
        return self._interp[0]


def _speed(curve):
    dc = finite_diff_derivative(curve)
    speed = np.linalg.norm(dc, axis=1)
    bad = np.flatnonzero(speed <= DEGENERACY_TOL)
    if bad.size:
        raise DegenerateCurve(f"|c'| = {speed[bad[0]]:.3g} at node {bad[0]}")
    return dc, speed


def srvt(curve):
    """Square-root velocity transform ``c' / sqrt(|c'|)``."""
    dc, speed = _speed(curve)
    return QMap(dc / np.sqrt(speed)[:, None], "SRVT")


def qmap_curve(curve):
    """Q-transform ``sqrt(|c'|) c``."""
    _, speed = _speed(curve)
    return QMap(np.sqrt(speed)[:, None] * curve.values, "QCurve")


def srvt_inverse(q):
    """Curve starting at the origin whose SRVT is ``q`` (trapezoidal quadrature of ``q|q|``)."""
    samples = q.samples if isinstance(q, QMap) else np.asarray(q, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    integrand = samples * np.linalg.norm(samples, axis=1)[:, None]
    t = uniform_nodes(samples.shape[0])
    return SampledCurve(cumulative_trapezoid(integrand, t, axis=0, initial=0.0))


def srnf(surface):
    """Square-root normal field ``sqrt(a_f) n_f``."""
    a, _ = area_factor(surface)
    fx, fy = partials_surface(surface)
    cross = np.cross(fx, fy)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(a[..., None] > DEGENERACY_TOL, cross / np.sqrt(a)[..., None], 0.0)
    return QMap(q, "SRNF")


def qmap_surface(surface):
    """Surface Q-transform ``sqrt(a_f) f``."""
    a, _ = area_factor(surface)
    return QMap(np.sqrt(a)[..., None] * surface.values, "QSurface")


TRANSFORMS = {
    "srvt": srvt,
    "q": qmap_curve,
    "srnf": srnf,
    "qsurf": qmap_surface,
}


def transform(name, shape):
    try:
        return TRANSFORMS[name](shape)
    except KeyError:
        raise ValueError(f"unknown transform {name!r}") from None


def _trapezoid_weights(K):
    w = np.full(K, 1.0 / (K - 1))
    w[[0, -1]] *= 0.5
    return w


def preshape_dist(q1, q2):
    """L^2 distance between two transformed shapes by (tensor) trapezoidal quadrature."""
    if q1.kind != q2.kind or q1.samples.shape != q2.samples.shape:
        raise GridMismatch(f"cannot compare {q1.kind}{q1.samples.shape} with {q2.kind}{q2.samples.shape}")
    sq = np.sum((q1.samples - q2.samples) ** 2, axis=-1)
    w = _trapezoid_weights(q1.K)
    if q1.dim == 1:
        total = w @ sq
    else:
        total = w @ sq @ w
    return float(np.sqrt(max(total, 0.0)))


def geodesic_curves(c1, c2, taus=DEFAULT_TAUS):
    """Curves ``R^-1(tau R(c1) + (1 - tau) R(c2))`` for each ``tau``."""
    if c1.values.shape != c2.values.shape:
        raise GridMismatch("curves must share grid and dimension")
    r1, r2 = srvt(c1).samples, srvt(c2).samples
    path = []
    for tau in taus:
        q = tau * r1 + (1 - tau) * r2
        norms = np.linalg.norm(q, axis=1)
        bad = np.flatnonzero(norms <= DEGENERACY_TOL)
        if bad.size:
            raise VanishingCombination(float(tau), int(bad[0]))
        path.append(srvt_inverse(q))
    return path


def compose(shape, net):
    """Samples of ``shape o net`` on the shape's own grid (interpolant at warped nodes)."""
    interp = make_interpolant(shape)
    if isinstance(shape, SampledCurve):
        return SampledCurve(interp(net(shape.nodes)))
    X, Y = grid_points(shape.K)
    warped = net(np.column_stack([X.ravel(), Y.ravel()]))
    return SampledSurface(interp(warped).reshape(shape.K, shape.K, 3))


def lerp(f1, f2, taus=DEFAULT_TAUS):
    """Pointwise convex combinations ``tau f1 + (1 - tau) f2``."""
    if f1.values.shape != f2.values.shape:
        raise GridMismatch("shapes must share grid and dimension")
    cls = type(f1)
    return [cls(tau * f1.values + (1 - tau) * f2.values) for tau in taus]


def lerp_after_reparam(f1, f2, phi_star, taus=DEFAULT_TAUS):
    """Convex combinations of ``f1`` and the reparametrized ``f2 o phi_star``."""
    phi_star.check()
    return lerp(f1, compose(f2, phi_star), taus)


def write_path(out_dir, shapes, taus, stem="shape"):
    """Write one CSV per tau plus ``manifest.json``; returns the manifest."""
    out_dir = Path(out_dir)
    entries = []
    for i, (tau, shape) in enumerate(zip(taus, shapes)):
        name = f"{stem}_{i:03d}.csv"
        if isinstance(shape, SampledCurve):
            io.write_curve_csv(out_dir / name, shape)
        else:
            io.write_surface_csv(out_dir / name, shape)
        entries.append({"tau": float(tau), "file": name})
    manifest = {"taus": [float(t) for t in taus], "frames": entries}
    io.write_json(out_dir / "manifest.json", manifest)
    return manifest
