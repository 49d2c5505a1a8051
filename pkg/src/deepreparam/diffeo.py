"""Elementary diffeomorphisms of [0, 1] and [0, 1]^2 and their compositions.

A layer is ``x -> x + sum_n w_n f_n(x)`` over a fixed basis of vector fields
tangent to the domain boundary.  A layer is *feasible* when the Lipschitz
estimate ``sum_n |w_n| L_n`` of its residual stays below ``1 - eps``; feasible
layers are orientation-preserving diffeomorphisms and so are compositions of
them.  Layers are stored in application order: ``layers[0]`` acts first.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleLayer, ReparamError

DEFAULT_EPS = 1e-2
FEASIBILITY_SLACK = 1e-12


class Basis1D:
    """Sine basis ``f_n(x) = sin(n pi x) / (n pi)``, ``n = 1..M``.

    Every element vanishes at both endpoints and has ``sup |f_n'| = 1``.
    """

    dim = 1
    kind = "sine1d"

    def __init__(self, M):
        if M < 1:
            raise ValueError("basis needs at least one function")
        self.M = int(M)
        self.freqs = np.pi * np.arange(1, self.M + 1)

    def __repr__(self):
        return f"Basis1D(M={self.M})"

    def __eq__(self, other):
        return isinstance(other, Basis1D) and other.M == self.M

    def __hash__(self):
        return hash(("sine1d", self.M))

    @property
    def size(self):
        return self.M

    def lipschitz(self):
        return np.ones(self.M)

    def evaluate(self, x, order=1):
        """Derivatives ``0..order`` of all basis functions at ``x``.

        Returns a list of arrays of shape ``x.shape + (M,)``; entry ``j`` holds
        ``f_n^{(j)}(x) = (n pi)^(j-1) sin(n pi x + j pi / 2)``.
        """
        arg = np.asarray(x, dtype=float)[..., None] * self.freqs
        s, c = np.sin(arg), np.cos(arg)
        cycle = (s, c, -s, -c)
        out = [s / self.freqs]
        scale = np.ones(self.M)
        for j in range(1, order + 1):
            out.append(scale * cycle[j % 4])
            scale = scale * self.freqs
        return out

    def to_dict(self):
        return {"kind": self.kind, "M": self.M}


def basis_size_2d(N):
    """Number of vector fields in the 2-D basis with maximal frequency ``N``."""
    return 2 * (2 * N * N + N)


class Basis2D:
    """Boundary-tangent Fourier basis of vector fields on ``[0, 1]^2``.

    For the first component the three families are::

        xi_k(x, y)     = sin(pi k x) / (pi k)
        eta_{k,l}(x, y) = sin(pi k x) cos(2 pi l y) / (pi k l)
        phi_{k,l}(x, y) = sin(pi k x) sin(2 pi l y) / (pi k l)

    with ``k, l = 1..N``; the second component uses the same functions with
    the arguments swapped.  Ordering: first component (xi, then eta, then phi,
    ``k`` major), then the second component in the same order.

    ``lipschitz_rule`` selects the stored per-field Lipschitz constants:
    ``"closed_form"`` uses ``sqrt(k^2 + 2 l^2) / (k l)`` for eta and phi,
    ``"sup"`` uses the exact supremum ``max(1/l, 2/k)`` of the Jacobian
    Frobenius norm.
    """

    dim = 2
    kind = "fourier2d"

    def __init__(self, N, lipschitz_rule="closed_form"):
        if N < 1:
            raise ValueError("maximal frequency must be at least 1")
        if lipschitz_rule not in ("closed_form", "sup"):
            raise ValueError(f"unknown lipschitz rule {lipschitz_rule!r}")
        self.N = int(N)
        self.lipschitz_rule = lipschitz_rule
        fields = []
        for comp in (0, 1):
            fields += [(comp, 0, k, 1) for k in range(1, N + 1)]
            for fam in (1, 2):
                fields += [(comp, fam, k, l) for k in range(1, N + 1) for l in range(1, N + 1)]
        self.fields = np.array(fields, dtype=int)  # columns: component, family, k, l
        self.M = len(fields)

    def __repr__(self):
        return f"Basis2D(N={self.N}, lipschitz_rule={self.lipschitz_rule!r})"

    def __eq__(self, other):
        return isinstance(other, Basis2D) and (other.N, other.lipschitz_rule) == (self.N, self.lipschitz_rule)

    def __hash__(self):
        return hash(("fourier2d", self.N, self.lipschitz_rule))

    @property
    def size(self):
        return self.M

    def labels(self):
        names = ("xi", "eta", "phi")
        out = []
        for comp, fam, k, l in self.fields:
            idx = f"{k}" if fam == 0 else f"{k},{l}"
            out.append(f"{names[fam]}[{idx}]" + ("~" if comp else ""))
        return out

    def lipschitz(self):
        _, fam, k, l = self.fields.T
        k = k.astype(float)
        l = l.astype(float)
        if self.lipschitz_rule == "closed_form":
            mixed = np.sqrt(k**2 + 2 * l**2) / (k * l)
        else:
            mixed = np.maximum(1 / l, 2 / k)
        return np.where(fam == 0, 1.0, mixed)

    @property
    def components(self):
        return self.fields[:, 0]

    @property
    def component_masks(self):
        return (self.components == 0, self.components == 1)

    def compact(self, points, order=1):
        """Scalar form of the fields at ``points`` of shape ``(n, 2)``.

        Field ``m`` is ``s_m(x, y) e_{c_m}`` with ``c_m = components[m]``.
        Returns ``[s, grad s, hess s]`` truncated to ``order``, with shapes
        ``(n, M)``, ``(n, M, 2)`` and ``(n, M, 3)``; Hessians are stored as
        ``(xx, xy, yy)``.
        """
        if order > 2:
            raise ValueError("2-D basis derivatives are available up to order 2")
        points = np.asarray(points, dtype=float)
        n, N = points.shape[0], self.N
        pk = np.pi * np.arange(1, N + 1)
        l = np.arange(1, N + 1, dtype=float)
        parts = [[] for _ in range(order + 1)]
        for comp in (0, 1):
            # u is the coordinate along the field's component, v the other one
            u, v = points[:, comp], points[:, 1 - comp]
            su, cu = np.sin(u[:, None] * pk), np.cos(u[:, None] * pk)
            sv, cv = np.sin(2 * np.pi * v[:, None] * l), np.cos(2 * np.pi * v[:, None] * l)
            A = (su / pk, cu, -pk * su)
            # (B0, B1, B2) for the eta and phi families
            Bs = ((cv / l, -2 * np.pi * sv, -4 * np.pi**2 * l * cv),
                  (sv / l, 2 * np.pi * cv, -4 * np.pi**2 * l * sv))

            def outer(a, b):
                return (a[:, :, None] * b[:, None, :]).reshape(n, N * N)

            zero = np.zeros((n, N))
            vals = [A[0]] + [outer(A[0], B[0]) for B in Bs]
            parts[0].append(np.concatenate(vals, axis=1))
            if order >= 1:
                du = np.concatenate([A[1]] + [outer(A[1], B[0]) for B in Bs], axis=1)
                dv = np.concatenate([zero] + [outer(A[0], B[1]) for B in Bs], axis=1)
                g = (du, dv) if comp == 0 else (dv, du)
                parts[1].append(np.stack(g, axis=-1))
            if order >= 2:
                uu = np.concatenate([A[2]] + [outer(A[2], B[0]) for B in Bs], axis=1)
                uv = np.concatenate([zero] + [outer(A[1], B[1]) for B in Bs], axis=1)
                vv = np.concatenate([zero] + [outer(A[0], B[2]) for B in Bs], axis=1)
                h = (uu, uv, vv) if comp == 0 else (vv, uv, uu)
                parts[2].append(np.stack(h, axis=-1))
        return [np.concatenate(p, axis=1) for p in parts]

    def evaluate(self, points, order=1):
        """Dense field values ``(n, M, 2)``, Jacobians ``(n, M, 2, 2)`` and Hessians ``(n, M, 2, 2, 2)``.

        ``jac[p, m, c, d] = d F_m,c / d x_d`` and
        ``hess[p, m, c, d, e] = d^2 F_m,c / d x_d d x_e``.
        """
        cs = self.compact(points, order)
        n = cs[0].shape[0]
        cols = np.arange(self.M)
        comp = self.components
        vals = np.zeros((n, self.M, 2))
        vals[:, cols, comp] = cs[0]
        out = [vals]
        if order >= 1:
            jac = np.zeros((n, self.M, 2, 2))
            jac[:, cols, comp, :] = cs[1]
            out.append(jac)
        if order >= 2:
            hess = np.zeros((n, self.M, 2, 2, 2))
            h = cs[2]
            hess[:, cols, comp, 0, 0] = h[..., 0]
            hess[:, cols, comp, 0, 1] = h[..., 1]
            hess[:, cols, comp, 1, 0] = h[..., 1]
            hess[:, cols, comp, 1, 1] = h[..., 2]
            out.append(hess)
        return out

    def to_dict(self):
        d = {"kind": self.kind, "N": self.N}
        if self.lipschitz_rule != "closed_form":
            d["lipschitz_rule"] = self.lipschitz_rule
        return d


def basis_from_dict(d):
    if d.get("kind") == "sine1d":
        return Basis1D(int(d["M"]))
    if d.get("kind") == "fourier2d":
        return Basis2D(int(d["N"]), d.get("lipschitz_rule", "closed_form"))
    raise ReparamError(f"unknown basis kind {d.get('kind')!r}")


def lipschitz_constants(basis):
    """Per-basis-function Lipschitz constants ``L_n``."""
    return basis.lipschitz()


@dataclass(frozen=True)
class FeasibleSpec:
    """Weight feasible set ``sum_n |w_n| L_n <= 1 - eps``."""

    lipschitz: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        L = np.asarray(self.lipschitz, dtype=float)
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if np.any(L <= 0):
            raise ValueError("Lipschitz constants must be positive")
        object.__setattr__(self, "lipschitz", L)

    @classmethod
    def for_basis(cls, basis, eps=DEFAULT_EPS):
        return cls(basis.lipschitz(), eps)

    def weighted_norm(self, w):
        return float(np.abs(w) @ self.lipschitz)

    def is_feasible(self, w, slack=FEASIBILITY_SLACK):
        return self.weighted_norm(w) <= 1 - self.eps + slack


def project_weights(w, spec):
    """Scale ``w`` onto the feasible set; feasible vectors are returned unchanged."""
    w = np.asarray(w, dtype=float)
    bound = 1 - spec.eps
    s = spec.weighted_norm(w)
    if s <= bound:
        return w.copy()
    return w * (bound / s)


@dataclass(frozen=True)
class DiffeoLayer:
    """One elementary diffeomorphism ``id + sum_n w_n f_n``."""

    weights: np.ndarray
    basis: object
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size != self.basis.size:
            raise ValueError(f"expected {self.basis.size} weights, got {w.size}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def spec(self):
        return FeasibleSpec.for_basis(self.basis, self.eps)

    def lipschitz_bound(self):
        return self.spec.weighted_norm(self.weights)

    def is_feasible(self):
        return self.spec.is_feasible(self.weights)

    def check(self):
        if not self.is_feasible():
            raise InfeasibleLayer(
                f"layer Lipschitz estimate {self.lipschitz_bound():.6g} exceeds 1 - eps = {1 - self.eps:g}"
            )

    def trace(self, x, order=1):
        """Evaluate the layer, keeping basis evaluations for reverse-mode use.

        In 2-D the stored basis data is the compact scalar form of
        :meth:`Basis2D.compact`.
        """
        w = self.weights
        if self.basis.dim == 1:
            basis_vals = self.basis.evaluate(x, order)
            value = x + basis_vals[0] @ w
            deriv = 1.0 + basis_vals[1] @ w
        else:
            basis_vals = self.basis.compact(x, order)
            S, G = basis_vals[0], basis_vals[1]
            value = x.copy()
            deriv = np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()
            for c, mask in enumerate(self.basis.component_masks):
                value[:, c] += S[:, mask] @ w[mask]
                deriv[:, c, :] += np.einsum("nmd,m->nd", G[:, mask], w[mask])
        return LayerTrace(x=x, basis=basis_vals, value=value, deriv=deriv)

    def evaluate(self, x):
        """Layer value and derivative (scalar in 1-D, 2x2 Jacobian in 2-D)."""
        self.check()
        t = self.trace(np.asarray(x, dtype=float), 1)
        return t.value, t.deriv

    def __call__(self, x):
        return self.evaluate(x)[0]


def layer_eval(layer, x):
    return layer.evaluate(x)


@dataclass
class LayerTrace:
    x: np.ndarray
    basis: list
    value: np.ndarray
    deriv: np.ndarray


@dataclass
class NetEval:
    """Result of a forward pass.

    ``deriv`` is ``phi'`` (1-D) or the Jacobian ``(n, 2, 2)`` (2-D);
    ``jacdet`` is ``phi'`` or ``det J_phi``.  ``traces`` keep per-layer
    intermediates in application order.
    """

    value: np.ndarray
    deriv: np.ndarray
    jacdet: np.ndarray
    traces: list = field(default_factory=list)


class DiffeoNet:
    """Composition ``phi_L o ... o phi_1`` of elementary diffeomorphisms."""

    def __init__(self, basis, weights=(), eps=DEFAULT_EPS):
        self.basis = basis
        self.eps = float(eps)
        W = np.asarray(weights, dtype=float)
        if W.size == 0:
            W = np.zeros((0, basis.size))
        W = W.reshape(-1, basis.size)
        self.layers = tuple(DiffeoLayer(w, basis, self.eps) for w in W)

    @classmethod
    def identity(cls, basis, L, eps=DEFAULT_EPS):
        return cls(basis, np.zeros((L, basis.size)), eps)

    @property
    def dim(self):
        return self.basis.dim

    @property
    def L(self):
        return len(self.layers)

    @property
    def M(self):
        return self.basis.size

    @property
    def spec(self):
        return FeasibleSpec.for_basis(self.basis, self.eps)

    @property
    def weight_matrix(self):
        if not self.layers:
            return np.zeros((0, self.M))
        return np.stack([layer.weights for layer in self.layers])

    @property
    def weights(self):
        """Flattened weights, layer-major then basis index."""
        return self.weight_matrix.reshape(-1)

    def with_weights(self, flat):
        return DiffeoNet(self.basis, np.asarray(flat, dtype=float).reshape(self.L, self.M), self.eps)

    def projected(self):
        spec = self.spec
        return DiffeoNet(self.basis, [project_weights(l.weights, spec) for l in self.layers], self.eps)

    def prepend(self, w):
        """Net ``self o (id + sum w_n f_n)``: the new layer acts first."""
        return DiffeoNet(self.basis, np.vstack([np.reshape(w, (1, -1)), self.weight_matrix]), self.eps)

    def append(self, w):
        """Net ``(id + sum w_n f_n) o self``: the new layer acts last."""
        return DiffeoNet(self.basis, np.vstack([self.weight_matrix, np.reshape(w, (1, -1))]), self.eps)

    def layer_bounds(self):
        spec = self.spec
        return np.array([spec.weighted_norm(l.weights) for l in self.layers])

    def is_feasible(self):
        return all(l.is_feasible() for l in self.layers)

    def check(self):
        for i, layer in enumerate(self.layers):
            try:
                layer.check()
            except InfeasibleLayer as exc:
                raise InfeasibleLayer(f"layer {i}: {exc}") from None

    def forward(self, x, order=1, check=True):
        """Evaluate value and derivative, keeping per-layer traces.

        ``order=2`` also stores second basis derivatives, which the loss
        gradient needs.
        """
        if check:
            self.check()
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        traces = []
        if self.dim == 1:
            deriv = np.ones(n)
        else:
            deriv = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
        cur = x
        for layer in self.layers:
            t = layer.trace(cur, order)
            traces.append(t)
            if self.dim == 1:
                deriv = deriv * t.deriv
            else:
                deriv = t.deriv @ deriv
            cur = t.value
        jacdet = deriv if self.dim == 1 else np.linalg.det(deriv)
        return NetEval(value=cur, deriv=deriv, jacdet=jacdet, traces=traces)

    def __call__(self, x):
        return self.forward(x).value

    def to_dict(self):
        return {
            "dim": self.dim,
            "epsilon": self.eps,
            "basis": self.basis.to_dict(),
            "layers": [[float(v) for v in l.weights] for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        basis = basis_from_dict(d["basis"])
        if int(d["dim"]) != basis.dim:
            raise ReparamError("network dim does not match basis")
        return cls(basis, np.asarray(d["layers"], dtype=float).reshape(-1, basis.size), float(d["epsilon"]))

    def dumps(self):
        """JSON text with weights written to 17 significant digits."""
        layers = ",\n    ".join("[" + ", ".join(format(v, ".17g") for v in l.weights) + "]" for l in self.layers)
        head = json.dumps({"dim": self.dim, "epsilon": self.eps, "basis": self.basis.to_dict()}, sort_keys=True)
        body = f'"layers": [\n    {layers}\n  ]' if self.layers else '"layers": []'
        return head[:-1] + ",\n  " + body + "\n}\n"

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"DiffeoNet({self.basis!r}, L={self.L}, eps={self.eps:g})"


def net_eval(net, x):
    ev = net.forward(x)
    return ev.value, ev.deriv, ev.traces


def random_feasible_net(basis, L, rng, eps=DEFAULT_EPS, radius=None):
    """Net with standard-normal weights scaled per layer.

    With ``radius=None`` each layer is projected onto the feasible set;
    otherwise every layer is rescaled so ``sum |w_n| L_n == radius``.
    """
    spec = FeasibleSpec.for_basis(basis, eps)
    W = rng.standard_normal((L, basis.size))
    rows = []
    for w in W:
        if radius is None:
            rows.append(project_weights(w, spec))
        else:
            rows.append(w * (radius / spec.weighted_norm(w)))
    return DiffeoNet(basis, np.array(rows).reshape(L, basis.size), eps)
