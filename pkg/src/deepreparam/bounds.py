"""Schroeder numbers, C^k norms of 1-D compositions and bound-ratio experiments.

Derivatives of compositions are propagated as jets with Faa di Bruno's
formula.  The partial Bell polynomials are built from integer partitions of
``n`` together with the number of set partitions of each block-size type,
which is the same counting that defines the Schroeder-type numbers ``M_k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import io
from .diffeo import Basis1D, DiffeoLayer, DiffeoNet

DEFAULT_NORM_GRID = 10001
MIN_NORM_GRID = 1001
RATIO_SLACK = 1e-6
REPORT_HEADER = ["k", "L", "M", "strategy", "seed", "sum_norm", "comp_norm", "ratio"]


# -- partition counting ----------------------------------------------------


def _integer_partitions(n, largest=None):
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for part in range(min(n, largest), 0, -1):
        for rest in _integer_partitions(n - part, part):
            yield (part,) + rest


@lru_cache(maxsize=None)
def partition_types(n):
    """Block-size types of set partitions of ``{1..n}`` with their multiplicities.

    Returns a tuple of ``(sizes, count)`` where ``sizes`` is a non-increasing
    tuple summing to ``n`` and ``count = n! / (prod s_i! prod m_s!)`` is the
    number of set partitions whose blocks have exactly those sizes.
    """
    out = []
    for sizes in _integer_partitions(n):
        denom = 1
        for s in sizes:
            denom *= math.factorial(s)
        for s in set(sizes):
            denom *= math.factorial(sizes.count(s))
        out.append((sizes, math.factorial(n) // denom))
    return tuple(out)


@dataclass(frozen=True)
class SchroederTable:
    """Exact values ``M_0..M_kmax``."""

    values: tuple

    def __getitem__(self, k):
        return self.values[k]

    def __len__(self):
        return len(self.values)

    @property
    def kmax(self):
        return len(self.values) - 1


def schroeder(kmax):
    """``M_k = sum over set partitions of {1..k} into >= 2 blocks of prod M_|block|``.

    ``M_0 = M_1 = 1``.  The sum is grouped by block-size type so no set
    partition is enumerated.
    """
    if kmax < 0:
        raise ValueError("kmax must be non-negative")
    vals = [1, 1]
    for k in range(2, kmax + 1):
        total = 0
        for sizes, count in partition_types(k):
            if len(sizes) < 2:
                continue
            prod = count
            for s in sizes:
                prod *= vals[s]
            total += prod
        vals.append(total)
    return SchroederTable(tuple(vals[: kmax + 1]))


def bell_polynomial(n, j, xs):
    """Partial Bell polynomial ``B_{n,j}(x_1, ..., x_{n-j+1})``.

    ``xs[i]`` holds ``x_i`` (``xs[0]`` is ignored); entries may be arrays.
    """
    if n == 0 and j == 0:
        return 1.0
    total = 0.0
    for sizes, count in partition_types(n):
        if len(sizes) != j:
            continue
        term = float(count)
        for s in sizes:
            term = term * xs[s]
        total = total + term
    return total


def compose_jets(outer, inner):
    """Derivatives ``0..k`` of ``g o h`` from those of ``g`` (at ``h``) and ``h``.

    ``outer[j] = g^(j)(h(x))`` and ``inner[i] = h^(i)(x)``, both of length
    ``k + 1``.
    """
    k = len(inner) - 1
    out = [outer[0]]
    for n in range(1, k + 1):
        acc = 0.0
        for j in range(1, n + 1):
            acc = acc + outer[j] * bell_polynomial(n, j, inner)
        out.append(acc)
    return out


# -- fields and norms ------------------------------------------------------


@dataclass(frozen=True)
class CkNormSpec:
    """Grid C^k norm: max over orders ``0..k`` of the grid sup of ``|f^(j)|``."""

    k: int
    n_grid: int = DEFAULT_NORM_GRID

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.n_grid < MIN_NORM_GRID:
            raise ValueError(f"n_grid must be at least {MIN_NORM_GRID}")

    @property
    def grid(self):
        return np.linspace(0.0, 1.0, self.n_grid)


def field_jet(weights, x, k):
    """Derivatives ``0..k`` of ``sum_n w_n sin(n pi x) / (n pi)``.

    ``weights`` has shape ``batch + (M,)`` and ``x`` shape ``batch + (N,)``
    (or ``(N,)``, broadcast against the batch).  Returns a list of
    ``batch + (N,)`` arrays.
    """
    weights = np.asarray(weights, dtype=float)
    freqs = np.pi * np.arange(1, weights.shape[-1] + 1)
    # sin/cos of n pi x from powers of exp(i pi x)
    z = np.exp(1j * np.pi * np.asarray(x, dtype=float))
    powers = np.cumprod(np.broadcast_to(z[..., None], z.shape + (freqs.size,)), axis=-1)
    # order j pairs sin (j even) or cos (j odd) with sign (-1)^(j // 2)
    # and scale freqs^(j - 1)
    orders = np.arange(k + 1)
    scale = freqs[:, None] ** (orders - 1.0) * np.where(orders // 2 % 2, -1.0, 1.0)
    coef = weights[..., :, None] * scale
    out = [None] * (k + 1)
    even = np.ascontiguousarray(powers.imag) @ coef[..., 0::2]
    out[0::2] = [even[..., i] for i in range(even.shape[-1])]
    if k >= 1:
        odd = np.ascontiguousarray(powers.real) @ coef[..., 1::2]
        out[1::2] = [odd[..., i] for i in range(odd.shape[-1])]
    return out


def composition_jet(weights, x, k):
    """Derivatives ``0..k`` of ``(id + f_L) o ... o (id + f_1)`` at ``x``.

    ``weights`` has shape ``batch + (L, M)``; layer 0 acts first.
    """
    weights = np.asarray(weights, dtype=float)
    x = np.asarray(x, dtype=float)
    batch = weights.shape[:-2]
    jet = [np.broadcast_to(x, batch + x.shape).copy()]
    if k >= 1:
        jet.append(np.ones(batch + x.shape))
    jet.extend(np.zeros(batch + x.shape) for _ in range(2, k + 1))
    for ell in range(weights.shape[-2]):
        f = field_jet(weights[..., ell, :], jet[0], k)
        outer = [jet[0] + f[0]]
        if k >= 1:
            outer.append(1.0 + f[1])
        outer.extend(f[2:])
        jet = compose_jets(outer, jet)
    return jet


def residual_jet(weights, x, k):
    """Derivatives ``0..k`` of ``composition - id``."""
    jet = composition_jet(weights, x, k)
    jet[0] = jet[0] - x
    if k >= 1:
        jet[1] = jet[1] - 1.0
    return jet


def _jet_norm(jet):
    return np.max([np.max(np.abs(d), axis=-1) for d in jet], axis=0)


def field_norms(weights, spec):
    """C^k norms of each field ``f_l`` for weights of shape ``batch + (L, M)``."""
    return _jet_norm(field_jet(weights, spec.grid, spec.k))


def _as_1d_weights(obj):
    if isinstance(obj, DiffeoNet):
        if not isinstance(obj.basis, Basis1D):
            raise ValueError("C^k norms are implemented for 1-D nets only")
        return obj.weight_matrix, True
    if isinstance(obj, DiffeoLayer):
        if not isinstance(obj.basis, Basis1D):
            raise ValueError("C^k norms are implemented for 1-D layers only")
        return np.asarray(obj.weights, dtype=float), False
    w = np.asarray(obj, dtype=float)
    if w.ndim == 1:
        return w, False
    if w.ndim == 2:
        return w, True
    raise ValueError("expected a 1-D net, layer, weight vector or (L, M) weight matrix")


def ck_norm(obj, spec):
    """Grid C^k norm of a field or of a composition's residual.

    A :class:`DiffeoLayer` or a weight vector is treated as the field
    ``sum w_n f_n``; a :class:`DiffeoNet` or an ``(L, M)`` weight matrix as the
    residual ``composition - id``.
    """
    w, is_net = _as_1d_weights(obj)
    if w.size == 0:
        return 0.0
    if is_net:
        return float(_jet_norm(residual_jet(w, spec.grid, spec.k)))
    return float(_jet_norm(field_jet(w, spec.grid, spec.k)))


def scale_to_hypothesis(weights, k, n_grid=DEFAULT_NORM_GRID):
    """Scale all fields by ``alpha = min(1, 1 / sum_l ||f_l||_{C^k})``.

    ``weights`` has shape ``batch + (L, M)``; returns ``(scaled, alpha)`` with
    ``alpha`` of shape ``batch``.
    """
    weights = np.asarray(weights, dtype=float)
    total = np.sum(field_norms(weights, CkNormSpec(k, n_grid)), axis=-1)
    with np.errstate(divide="ignore"):
        alpha = np.where(total > 1.0, 1.0 / np.where(total > 0, total, 1.0), 1.0)
    return weights * np.asarray(alpha)[..., None, None], alpha


# -- experiments -----------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    """One bound-ratio run."""

    k: int
    L: int
    M: int
    strategy: str
    seed: int
    sum_norm: float
    comp_norm: float
    ratio: float

    def as_row(self):
        return [self.k, self.L, self.M, self.strategy, self.seed, self.sum_norm, self.comp_norm, self.ratio]


@dataclass(frozen=True)
class BoundExperiment:
    reports: tuple
    n_grid: int
    seed: int

    @property
    def table(self):
        kmax = max((r.k for r in self.reports), default=0)
        return schroeder(kmax)

    def violations(self, slack=RATIO_SLACK):
        table = self.table
        return [r for r in self.reports if r.ratio > table[r.k] + slack]

    @property
    def ok(self):
        return not self.violations()

    def max_ratio(self, k):
        vals = [r.ratio for r in self.reports if r.k == k]
        return max(vals) if vals else None

    def summary(self):
        cells = {}
        for r in self.reports:
            key = (r.k, r.L, r.M)
            best = cells.get(key)
            if best is None or r.ratio > best.ratio:
                cells[key] = r
        table = self.table
        ks = sorted({r.k for r in self.reports})
        return {
            "n_grid": self.n_grid,
            "seed": self.seed,
            "runs": len(self.reports),
            "violations": len(self.violations()),
            "schroeder": {str(k): table[k] for k in ks},
            "max_ratio": {str(k): self.max_ratio(k) for k in ks},
            "max_ratio_over_Mk": {str(k): self.max_ratio(k) / table[k] for k in ks},
            "cells": [
                {"k": k, "L": L, "M": M, "max_ratio": r.ratio, "strategy": r.strategy, "seed": r.seed}
                for (k, L, M), r in sorted(cells.items())
            ],
        }

    def csv_text(self):
        return io.csv_text(REPORT_HEADER, [r.as_row() for r in self.reports])

    def write(self, csv_path, json_path):
        io.atomic_write_text(csv_path, self.csv_text())
        io.write_json(json_path, self.summary())


def _cell_reports(k, L, M, runs, seed, n_grid, chunk):
    spec = CkNormSpec(k, n_grid)
    x = spec.grid
    if runs <= 0:
        return []
    # Strategy one uses all-ones weights; strategy two draws each run from its
    # own stream so that a row can be regenerated from (seed, k, L, M, run).
    raw = [("ones", -1, np.ones((L, M)))]
    streams = np.random.SeedSequence([seed, k, L, M]).spawn(runs)
    raw += [("normal", j, np.random.default_rng(s).standard_normal((L, M))) for j, s in enumerate(streams)]
    out = []
    for start in range(0, len(raw), chunk):
        block = raw[start : start + chunk]
        w = np.stack([b[2] for b in block])
        norms = field_norms(w, spec)
        total = norms.sum(axis=-1)
        alpha = np.where(total > 1.0, 1.0 / np.where(total > 0, total, 1.0), 1.0)
        w = w * alpha[:, None, None]
        sum_norm = total * alpha
        comp = _jet_norm(residual_jet(w, x, k))
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(sum_norm > 0, comp / (sum_norm * np.exp(k * sum_norm)), 0.0)
        for (strategy, run, _), s_, c_, r_ in zip(block, sum_norm, comp, ratio):
            out.append(BoundReport(k, L, M, strategy, run, float(s_), float(c_), float(r_)))
    return out


def bound_ratio_experiment(L_list, M_list, k_list, runs=500, seed=0, n_grid=DEFAULT_NORM_GRID, chunk=None):
    """Composition bound ratios for every ``(k, L, M)`` cell.

    Each cell evaluates one all-ones initialisation and ``runs`` standard
    normal initialisations, scales them so that ``sum ||f_l||_{C^k} <= 1`` and
    records ``||comp - id||_{C^k} / (S e^{k S})`` with ``S`` the scaled sum.
    ``runs = 0`` yields an empty report.
    """
    chunk = chunk or max(1, int(4e6 // max(1, n_grid * max(M_list, default=1))))
    reports = []
    for k in k_list:
        for L in L_list:
            for M in M_list:
                reports.extend(_cell_reports(int(k), int(L), int(M), int(runs), int(seed), n_grid, chunk))
    return BoundExperiment(tuple(reports), n_grid, int(seed))


@dataclass(frozen=True)
class SumBoundCheck:
    """``||comp - id||_inf <= sum_l ||f_l||_inf`` for one net."""

    comp_sup: float
    field_sups: tuple

    @property
    def holds(self):
        return self.comp_sup <= sum(self.field_sups) * (1 + 1e-12) + 1e-15


def sum_bound_check(net, n_grid=DEFAULT_NORM_GRID):
    """Grid check of the sup-norm bound, which needs no smallness hypothesis."""
    spec = CkNormSpec(0, n_grid)
    w = net.weight_matrix
    comp = ck_norm(net, spec)
    sups = tuple(float(v) for v in field_norms(w, spec)) if w.size else ()
    return SumBoundCheck(comp, sups)


@dataclass(frozen=True)
class LipschitzCheck:
    """Chained Lipschitz bounds for one net, all from grid difference quotients."""

    lip_comp: float
    lips: tuple
    product_bound: float
    exp_bound: float
    exp_sum_bound: float

    @property
    def holds(self):
        tol = 1e-12
        return (
            self.lip_comp <= self.product_bound * (1 + tol) + tol
            and self.product_bound <= self.exp_bound * (1 + tol) + tol
            and self.exp_bound <= self.exp_sum_bound * (1 + tol) + tol
        )


@dataclass(frozen=True)
class LipschitzReport:
    checks: tuple

    @property
    def holds(self):
        return all(c.holds for c in self.checks)

    def __bool__(self):
        return self.holds


def _grid_lipschitz(values, h):
    if values.shape[-1] < 2:
        return np.zeros(values.shape[:-1])
    return np.max(np.abs(np.diff(values, axis=-1)), axis=-1) / h


def lipschitz_product_check(nets, n_grid=DEFAULT_NORM_GRID):
    """Check ``Lip(comp - id) <= prod(1 + Lip f_l) - 1 <= e^S - 1 <= S e^S``.

    ``S = sum_l Lip f_l``.  Lipschitz constants are estimated by the largest
    difference quotient between adjacent nodes of a uniform grid.
    """
    if isinstance(nets, DiffeoNet):
        nets = [nets]
    x = np.linspace(0.0, 1.0, n_grid)
    h = x[1] - x[0]
    checks = []
    for net in nets:
        w = net.weight_matrix
        if w.size == 0:
            checks.append(LipschitzCheck(0.0, (), 0.0, 0.0, 0.0))
            continue
        resid = residual_jet(w, x, 0)[0]
        lip_comp = float(_grid_lipschitz(resid, h))
        lips = _grid_lipschitz(field_jet(w, x, 0)[0], h)
        S = float(np.sum(lips))
        product = float(np.prod(1.0 + lips) - 1.0)
        checks.append(LipschitzCheck(lip_comp, tuple(float(v) for v in lips), product, math.expm1(S), S * math.exp(S)))
    return LipschitzReport(tuple(checks))
