"""Discrete reparametrization losses and their optimizers.

The loss of a warp ``phi`` is the grid mean

    E = mean_k | q1(x_k) - sqrt(phi'(x_k)) r(phi(x_k)) |^2

where ``r`` interpolates the second transformed shape; in 2-D ``phi'`` is
replaced by ``det J_phi``.  Gradients are computed in reverse mode through
the layer chain, using the fact that ``phi'`` (or ``det J_phi``) is the
product of the per-layer derivatives (determinants).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .diffeo import DEFAULT_EPS, DiffeoNet, FeasibleSpec, project_weights
from .errors import NearSingularDerivative, ReparamError, StagnatedStep
from .geometry import grid_points, uniform_nodes
from .transforms import QMap

log = logging.getLogger(__name__)

SINGULAR_TOL = 1e-10
LOG_HEADER = ["iter", "loss", "grad_norm", "step", "projected"]


@dataclass(frozen=True)
class LossProblem:
    """Fixed target ``q1`` sampled at ``points`` and warped side ``q2``.

    ``net`` carries the basis, depth, margin and current weights.
    """

    q1: QMap
    q2: QMap
    net: DiffeoNet
    points: np.ndarray = None
    targets: np.ndarray = None

    def __post_init__(self):
        if self.q1.dim != self.q2.dim or self.q1.dim != self.net.dim:
            raise ReparamError("q-maps and network must share the domain dimension")
        if self.q1.samples.shape[-1] != self.q2.samples.shape[-1]:
            raise ReparamError("q-maps must have the same codomain dimension")
        if self.points is None:
            K = self.q1.K
            if self.q1.dim == 1:
                pts = uniform_nodes(K)
            else:
                X, Y = grid_points(K)
                pts = np.column_stack([X.ravel(), Y.ravel()])
            object.__setattr__(self, "points", pts)
            object.__setattr__(self, "targets", self.q1.samples.reshape(len(pts), -1))
        elif self.targets is None:
            object.__setattr__(self, "targets", self.q1.interpolant(self.points).reshape(len(self.points), -1))

    @property
    def dim(self):
        return self.net.dim

    def with_net(self, net):
        return replace(self, net=net)

    def with_weights(self, flat):
        return replace(self, net=self.net.with_weights(flat))

    def resampled(self, rng, n=None):
        """Same problem evaluated at uniformly random points of the domain."""
        n = n or len(self.points)
        pts = rng.random(n) if self.dim == 1 else rng.random((n, 2))
        return replace(self, points=pts, targets=None)


def _residual(problem, order):
    net = problem.net
    ev = net.forward(problem.points, order=order)
    r, dr = problem.q2.interpolant.evaluate(ev.value)
    return ev, r, dr


def loss(problem):
    """Mean squared residual of the warped transform over the evaluation points."""
    ev, r, _ = _residual(problem, 1)
    s = np.sqrt(np.clip(ev.jacdet, 0.0, None))
    e = problem.targets - s[:, None] * r
    return float(np.mean(np.sum(e * e, axis=1)))


def loss_and_grad(problem):
    """Loss and its exact gradient with respect to the flattened weights."""
    net = problem.net
    ev, r, dr = _residual(problem, 2)
    J = ev.jacdet
    if np.min(J) < SINGULAR_TOL:
        raise NearSingularDerivative(f"warp derivative {np.min(J):.3g} too small to differentiate")
    s = np.sqrt(J)
    e = problem.targets - s[:, None] * r
    n = len(e)
    E = float(np.mean(np.sum(e * e, axis=1)))

    # adjoints of the final point, of s and of log(layer derivative)
    if net.dim == 1:
        xbar = (-2.0 / n) * s * np.sum(e * dr, axis=1)
    else:
        xbar = (-2.0 / n) * s[:, None] * np.einsum("nc,ncd->nd", e, dr)
    sbar = (-2.0 / n) * np.sum(e * r, axis=1)
    beta = 0.5 * sbar * s

    grads = []
    for layer, t in zip(reversed(net.layers), reversed(ev.traces)):
        w = layer.weights
        if net.dim == 1:
            f, df, d2f = t.basis
            dbar = beta / t.deriv
            grads.append(f.T @ xbar + df.T @ dbar)
            xbar = xbar * t.deriv + dbar * (d2f @ w)
        else:
            S, G, Hs = t.basis
            Jl = t.deriv
            # beta * d(log det J)/dJ = beta * J^{-T}
            det = Jl[:, 0, 0] * Jl[:, 1, 1] - Jl[:, 0, 1] * Jl[:, 1, 0]
            cof = np.stack([np.stack([Jl[:, 1, 1], -Jl[:, 1, 0]], -1),
                            np.stack([-Jl[:, 0, 1], Jl[:, 0, 0]], -1)], 1)
            Jbar = (beta / det)[:, None, None] * cof
            g = np.empty(net.M)
            xnew = np.einsum("ncd,nc->nd", Jl, xbar)
            for c, mask in enumerate(net.basis.component_masks):
                g[mask] = S[:, mask].T @ xbar[:, c] + np.einsum("nmd,nd->m", G[:, mask], Jbar[:, c, :])
                T = np.einsum("nmk,m->nk", Hs[:, mask], w[mask])  # (xx, xy, yy) of this component
                xnew[:, 0] += Jbar[:, c, 0] * T[:, 0] + Jbar[:, c, 1] * T[:, 1]
                xnew[:, 1] += Jbar[:, c, 0] * T[:, 1] + Jbar[:, c, 1] * T[:, 2]
            grads.append(g)
            xbar = xnew
    grad = np.concatenate(grads[::-1]) if grads else np.zeros(0)
    return E, grad


def loss_grad(problem):
    return loss_and_grad(problem)[1]


def project_flat(flat, net):
    """Project every layer of a flattened weight vector onto the feasible set."""
    spec = net.spec
    W = np.asarray(flat, dtype=float).reshape(net.L, net.M)
    out = np.array([project_weights(w, spec) for w in W]).reshape(-1)
    return out, bool(np.any(out != W.reshape(-1)))


@dataclass(frozen=True)
class LogRow:
    iter: int
    loss: float
    grad_norm: float
    step: float
    projected: bool

    def as_row(self):
        return [self.iter, self.loss, self.grad_norm, self.step, int(self.projected)]


@dataclass
class OptimResult:
    net: DiffeoNet
    log: list
    status: str
    initial_loss: float
    final_loss: float
    extra: dict = field(default_factory=dict)

    @property
    def relative_loss(self):
        if self.initial_loss == 0:
            return 0.0
        return self.final_loss / self.initial_loss

    @property
    def iterations(self):
        return self.log[-1].iter if self.log else 0

    def __iter__(self):
        yield self.net
        yield self.log


def bfgs_reparam(
    problem,
    max_iter=200,
    grad_tol=1e-8,
    spec=None,
    c1=1e-4,
    min_step=1e-12,
    loss_floor=1e-14,
    callback=None,
):
    """Projected BFGS over all layer weights.

    Each trial point ``W + a p`` (``a`` halved from 1) is projected layer by
    layer onto the feasible set and accepted under the Armijo condition on
    the actual displacement.  Curvature pairs with ``s.y <= 1e-10 |s||y|``
    are skipped.  Stops on ``||grad||_inf < grad_tol``, on reaching
    ``loss_floor`` relative to the initial loss, after ``max_iter`` accepted
    steps, or when no step of length ``>= min_step`` decreases the loss.
    ``callback(row, net)`` is called after every accepted step.
    """
    net = problem.net
    if spec is not None:
        net = DiffeoNet(net.basis, net.weight_matrix, spec.eps)
        if not np.allclose(spec.lipschitz, net.spec.lipschitz):
            raise ReparamError("feasible spec does not match the network basis")
    W, _ = project_flat(net.weights, net)
    net = net.with_weights(W)
    problem = problem.with_net(net)

    E, g = loss_and_grad(problem)
    E0 = E
    rows = [LogRow(0, E, float(np.max(np.abs(g), initial=0.0)), 0.0, False)]
    n = W.size
    H = np.eye(n)
    first_update = True
    status = "max_iter"

    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g), initial=0.0))
        if gnorm < grad_tol:
            status = "grad_tol"
            break
        if E <= loss_floor * E0:
            status = "loss_floor"
            break

        accepted = None
        for attempt in range(2):
            p = -H @ g
            if g @ p >= 0:
                H = np.eye(n)
                first_update = True
                p = -g
            a = 1.0
            while a >= min_step:
                trial, projected = project_flat(W + a * p, net)
                s = trial - W
                gs = g @ s
                if gs < 0:
                    Et = loss(problem.with_weights(trial))
                    if Et < E and Et <= E + c1 * gs:
                        accepted = (trial, Et, a, projected)
                        break
                a *= 0.5
            if accepted or first_update:
                break
            # retry once along steepest descent before giving up
            H = np.eye(n)
            first_update = True
        if accepted is None:
            status = "step_collapse"
            break

        trial, Et, a, projected = accepted
        problem = problem.with_weights(trial)
        E_new, g_new = loss_and_grad(problem)
        s = trial - W
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                H = np.eye(n) * (sy / (y @ y))
                first_update = False
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
        W, E, g = trial, E_new, g_new
        row = LogRow(it, E, float(np.max(np.abs(g))), a, projected)
        rows.append(row)
        if callback is not None:
            callback(row, problem.net)
    else:
        status = "max_iter"

    log.debug("bfgs finished: %s after %d steps, E/E0=%.3g", status, rows[-1].iter, E / E0 if E0 else 0.0)
    return OptimResult(problem.net, rows, status, E0, E)


def bfgs_restarts(problem, restarts=0, rng=None, **kwargs):
    """Run :func:`bfgs_reparam`, then restart it ``restarts`` times from the result.

    With ``rng`` each restart trains on fresh uniform random points, which can
    help leave poor local minima.  Iterations of later runs are numbered on
    from the previous ones; the reported final loss is always measured on the
    original evaluation points and the best net is kept.
    """
    res = bfgs_reparam(problem, **kwargs)
    rows = list(res.log)
    best_net, best_E = res.net, res.final_loss
    status = res.status
    for _ in range(restarts):
        start = problem.with_net(best_net)
        if rng is not None:
            start = start.resampled(rng)
        r = bfgs_reparam(start, **kwargs)
        offset = rows[-1].iter
        rows.extend(replace(row, iter=row.iter + offset) for row in r.log[1:])
        E = loss(problem.with_net(r.net))
        if E < best_E:
            best_net, best_E, status = r.net, E, r.status
    return OptimResult(best_net, rows, status, res.initial_loss, best_E, {"restarts": restarts})


@dataclass(frozen=True)
class GDConfig:
    """Settings of the compose-only Riemannian gradient descent baseline."""

    M: int = 6
    eta: float = 1.0
    max_iter: int = 200
    c1: float = 1e-4
    shrink: float = 0.5
    min_eta: float = 1e-12
    grad_tol: float = 1e-8
    eps: float = DEFAULT_EPS
    refit_last: bool = False

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")


def gd_coefficients(problem):
    """Coefficients ``lambda_j``: derivative of the loss along ``phi o (id + s f_j)`` at ``s = 0``."""
    net = problem.net
    extended = problem.with_net(net.prepend(np.zeros(net.M)))
    return loss_grad(extended)[: net.M]


def gd_reparam(q1, q2, config=GDConfig(), basis=None, points=None):
    """Gradient descent ``phi <- phi o (id - eta sum_j lambda_j f_j)`` starting at the identity.

    Each iteration adds one layer (or, with ``refit_last``, updates the
    innermost one).  ``eta`` starts at twice the last accepted value and is
    halved until the projected update satisfies the Armijo condition.
    """
    from .diffeo import Basis1D, Basis2D

    if basis is None:
        basis = Basis1D(config.M) if q1.dim == 1 else Basis2D(config.M)
    net = DiffeoNet.identity(basis, 0, config.eps)
    problem = LossProblem(q1, q2, net, points=points)
    spec = FeasibleSpec.for_basis(basis, config.eps)

    E = loss(problem)
    E0 = E
    rows = [LogRow(0, E, 0.0, 0.0, False)]
    eta = config.eta
    status = "max_iter"
    for it in range(1, config.max_iter + 1):
        if E == 0.0:
            status = "loss_floor"
            break
        if config.refit_last and problem.net.L:
            front = problem.net.weight_matrix[0]
            lam = loss_grad(problem)[: net.M]
        else:
            front = None
            lam = gd_coefficients(problem)
        gnorm = float(np.max(np.abs(lam)))
        rows[-1] = replace(rows[-1], grad_norm=gnorm)
        if gnorm < config.grad_tol:
            status = "grad_tol"
            break

        eta_try = 2.0 * eta
        accepted = None
        while eta_try >= config.min_eta:
            if front is None:
                w = project_weights(-eta_try * lam, spec)
                cand = problem.net.prepend(w)
                step = w
            else:
                w = project_weights(front - eta_try * lam, spec)
                cand = DiffeoNet(basis, np.vstack([w, problem.net.weight_matrix[1:]]), config.eps)
                step = w - front
            Et = loss(problem.with_net(cand))
            if Et < E and Et <= E + config.c1 * (lam @ step):
                accepted = (cand, Et, not np.allclose(w, -eta_try * lam if front is None else front - eta_try * lam))
                break
            eta_try *= config.shrink
        if accepted is None:
            result = OptimResult(problem.net, rows, "stagnated", E0, E)
            raise StagnatedStep(f"no decreasing feasible step at iteration {it}", net=problem.net, log=result)
        cand, E, projected = accepted
        eta = eta_try
        problem = problem.with_net(cand)
        rows.append(LogRow(it, E, 0.0, eta, projected))
    if status == "max_iter":
        lam = gd_coefficients(problem)
        rows[-1] = replace(rows[-1], grad_norm=float(np.max(np.abs(lam))))
    return OptimResult(problem.net, rows, status, E0, E)


def run_sweep(make_problem, cells, optimizer=bfgs_reparam, **opt_kwargs):
    """Train one network per ``(L, M)`` cell with identical settings.

    ``make_problem(L, M)`` must return a :class:`LossProblem` at the identity.
    Returns dict rows ``L, M, final_loss, initial_loss, iters, seconds, status``;
    a failing cell is recorded with ``status='error: ...'`` and the sweep
    continues.
    """
    rows = []
    for L, M in cells:
        t0 = time.perf_counter()
        try:
            problem = make_problem(L, M)
            if L == 0:
                E = loss(problem)
                res = OptimResult(problem.net, [LogRow(0, E, 0.0, 0.0, False)], "identity", E, E)
            else:
                res = optimizer(problem, **opt_kwargs)
            rows.append(
                dict(L=L, M=M, final_loss=res.final_loss, initial_loss=res.initial_loss,
                     iters=res.iterations, seconds=time.perf_counter() - t0, status=res.status)
            )
        except Exception as exc:  # noqa: BLE001 - per-cell failures are data
            log.warning("sweep cell L=%s M=%s failed: %s", L, M, exc)
            rows.append(dict(L=L, M=M, final_loss=float("nan"), initial_loss=float("nan"),
                             iters=0, seconds=time.perf_counter() - t0, status=f"error: {exc}"))
    return rows
