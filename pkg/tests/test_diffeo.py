import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepreparam.diffeo import (
    Basis1D,
    Basis2D,
    DiffeoLayer,
    DiffeoNet,
    FeasibleSpec,
    basis_size_2d,
    layer_eval,
    lipschitz_constants,
    net_eval,
    project_weights,
    random_feasible_net,
)
from deepreparam.errors import InfeasibleLayer
from deepreparam.geometry import grid_points

from oracles import BASIS_2D_SIZES, ETA_11_CLOSED_FORM, LAYER_HALF_AT_HALF, nested_layers

seeds = st.integers(0, 2**32 - 1)


def grid2(K):
    X, Y = grid_points(K)
    return np.column_stack([X.ravel(), Y.ravel()])


def test_zero_layer_is_identity():
    x = np.linspace(0, 1, 9)
    v, d = layer_eval(DiffeoLayer(np.zeros(3), Basis1D(3)), x)
    np.testing.assert_array_equal(v, x)
    np.testing.assert_array_equal(d, 1.0)


def test_single_sine_layer_value():
    v, _ = layer_eval(DiffeoLayer([0.5], Basis1D(1)), np.array([0.5]))
    assert v[0] == pytest.approx(LAYER_HALF_AT_HALF, abs=1e-15)
    assert v[0] == pytest.approx(0.659155, abs=1e-6)


@given(seeds, st.integers(1, 8))
def test_layer_fixes_endpoints_exactly(seed, M):
    net = random_feasible_net(Basis1D(M), 1, np.random.default_rng(seed))
    v = net(np.array([0.0, 1.0]))
    assert v[0] == 0.0
    assert abs(v[1] - 1.0) <= 2**-52


def test_infeasible_layer_raises():
    layer = DiffeoLayer([1.0], Basis1D(1))
    with pytest.raises(InfeasibleLayer):
        layer.evaluate(np.array([0.5]))
    with pytest.raises(InfeasibleLayer):
        DiffeoNet(Basis1D(1), [[1.0]]).forward(np.array([0.5]))


@pytest.mark.parametrize("L", [0, 1, 3])
def test_zero_net_is_identity(L):
    x = np.linspace(0, 1, 11)
    v, d, traces = net_eval(DiffeoNet.identity(Basis1D(4), L), x)
    np.testing.assert_array_equal(v, x)
    np.testing.assert_array_equal(d, 1.0)
    assert len(traces) == L


def test_two_identical_layers_match_nested_evaluation():
    w = np.array([0.3, -0.2, 0.1])
    x = np.linspace(0, 1, 101)
    net = DiffeoNet(Basis1D(3), [w, w])
    np.testing.assert_allclose(net(x), nested_layers([w, w], x), atol=1e-14, rtol=0)


def test_zero_net_2d_has_unit_jacobian():
    ev = DiffeoNet.identity(Basis2D(2), 3).forward(grid2(5))
    np.testing.assert_array_equal(ev.deriv, np.broadcast_to(np.eye(2), ev.deriv.shape))
    np.testing.assert_array_equal(ev.jacdet, 1.0)


def test_projection_example():
    spec = FeasibleSpec(np.ones(2), eps=0.1)
    np.testing.assert_allclose(project_weights([2.0, 0.0], spec), [0.9, 0.0])
    np.testing.assert_array_equal(project_weights([0.3, -0.2], spec), [0.3, -0.2])


def test_projection_2d_hits_boundary():
    basis = Basis2D(1)
    spec = FeasibleSpec.for_basis(basis, 0.05)
    w = np.random.default_rng(0).normal(size=basis.size) * 3
    assert spec.weighted_norm(w) > 1 - spec.eps
    assert spec.weighted_norm(project_weights(w, spec)) == pytest.approx(1 - spec.eps, rel=1e-14)


@given(seeds, st.floats(1e-3, 0.5), st.floats(1e-3, 10.0))
def test_projection_properties(seed, eps, scale):
    rng = np.random.default_rng(seed)
    spec = FeasibleSpec(rng.uniform(0.5, 3.0, size=6), eps)
    w = rng.normal(size=6) * scale
    p = project_weights(w, spec)
    assert spec.weighted_norm(p) <= 1 - eps + 1e-12
    np.testing.assert_allclose(project_weights(p, spec), p, rtol=0, atol=1e-15)
    # same direction, non-expanding scale
    c = p @ w / (w @ w)
    assert 0 < c <= 1
    np.testing.assert_allclose(p, c * w, atol=1e-14)
    if spec.is_feasible(w):
        np.testing.assert_array_equal(p, w)


def test_lipschitz_constants_examples():
    np.testing.assert_array_equal(lipschitz_constants(Basis1D(7)), 1.0)
    b = Basis2D(3)
    L = lipschitz_constants(b)
    labels = b.labels()
    assert L[labels.index("eta[1,1]")] == pytest.approx(ETA_11_CLOSED_FORM, abs=1e-12)
    assert L[labels.index("eta[1,1]~")] == pytest.approx(ETA_11_CLOSED_FORM, abs=1e-12)
    for k in (1, 2, 3):
        assert L[labels.index(f"xi[{k}]")] == 1.0


@pytest.mark.parametrize("N", [1, 2, 3])
def test_basis_size(N):
    assert basis_size_2d(N) == BASIS_2D_SIZES[N]
    assert Basis2D(N).size == BASIS_2D_SIZES[N]


def test_basis_1d_derivatives_match_differences():
    b = Basis1D(5)
    x = np.linspace(0.05, 0.95, 7)
    h = 1e-5
    vals = b.evaluate(x, order=3)
    for j in range(3):
        up = b.evaluate(x + h, j)[j]
        dn = b.evaluate(x - h, j)[j]
        np.testing.assert_allclose((up - dn) / (2 * h), vals[j + 1], atol=1e-6 * (5 * np.pi) ** (j + 1))


def test_basis_2d_derivatives_match_differences():
    b = Basis2D(2)
    p = np.random.default_rng(0).random((5, 2))
    h = 1e-6
    vals, jac, hess = b.evaluate(p, order=2)
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fv = (b.evaluate(p + e, 0)[0] - b.evaluate(p - e, 0)[0]) / (2 * h)
        np.testing.assert_allclose(fv, jac[..., d], atol=1e-6)
        fj = (b.evaluate(p + e, 1)[1] - b.evaluate(p - e, 1)[1]) / (2 * h)
        np.testing.assert_allclose(fj, hess[..., d], atol=1e-4)


def test_basis_2d_fields_are_boundary_tangent():
    b = Basis2D(3)
    t = np.linspace(0, 1, 13)
    for fixed in (0.0, 1.0):
        vals = b.evaluate(np.column_stack([np.full_like(t, fixed), t]), 0)[0]
        assert np.max(np.abs(vals[..., 0])) < 1e-15
        vals = b.evaluate(np.column_stack([t, np.full_like(t, fixed)]), 0)[0]
        assert np.max(np.abs(vals[..., 1])) < 1e-15


def sampled_frobenius_sup(basis, K=201):
    _, jac = basis.evaluate(grid2(K), 1)
    return np.max(np.sqrt(np.sum(jac**2, axis=(2, 3))), axis=0)


def test_sup_rule_dominates_sampled_jacobian_norm():
    b = Basis2D(3, lipschitz_rule="sup")
    sampled = sampled_frobenius_sup(b)
    assert np.all(b.lipschitz() >= sampled - 1e-12)
    # the sup rule is attained on the grid
    np.testing.assert_allclose(b.lipschitz(), sampled, rtol=1e-3)


@pytest.mark.xfail(strict=True, reason="the closed-form eta/phi constants underestimate the Jacobian Frobenius sup")
def test_closed_form_rule_dominates_sampled_jacobian_norm():
    b = Basis2D(3, lipschitz_rule="closed_form")
    assert np.all(b.lipschitz() >= sampled_frobenius_sup(b) - 1e-12)


@given(seeds, st.integers(1, 6), st.integers(1, 10), st.sampled_from([1e-2, 0.1, 0.3]))
def test_1d_net_is_monotone(seed, L, M, eps):
    net = random_feasible_net(Basis1D(M), L, np.random.default_rng(seed), eps=eps)
    x = np.linspace(0, 1, 1001)
    ev = net.forward(x)
    assert np.all(np.diff(ev.value) > 0)
    assert np.all(ev.deriv >= eps**L * (1 - 1e-12))


@pytest.mark.parametrize("rule", ["closed_form", "sup"])
@given(seed=seeds, L=st.integers(1, 3), N=st.integers(1, 2))
def test_2d_net_preserves_orientation(rule, seed, L, N):
    eps = 1e-2
    net = random_feasible_net(Basis2D(N, rule), L, np.random.default_rng(seed), eps=eps)
    ev = net.forward(grid2(101))
    for t in ev.traces:
        assert np.min(np.linalg.det(t.deriv)) >= eps**2
    assert np.min(ev.jacdet) > 0


@given(seeds, st.integers(1, 3))
def test_2d_net_maps_faces_into_themselves(seed, L):
    net = random_feasible_net(Basis2D(2), L, np.random.default_rng(seed))
    t = np.linspace(0, 1, 41)
    for fixed in (0.0, 1.0):
        v = net(np.column_stack([np.full_like(t, fixed), t]))
        assert np.max(np.abs(v[:, 0] - fixed)) < 1e-12
        v = net(np.column_stack([t, np.full_like(t, fixed)]))
        assert np.max(np.abs(v[:, 1] - fixed)) < 1e-12


def test_1d_derivative_matches_differences():
    rng = np.random.default_rng(11)
    net = random_feasible_net(Basis1D(6), 4, rng)
    x = rng.uniform(0.01, 0.99, 100)
    h = 1e-6
    fd = (net(x + h) - net(x - h)) / (2 * h)
    np.testing.assert_allclose(net.forward(x).deriv, fd, rtol=1e-6)


def test_2d_jacobian_matches_differences():
    rng = np.random.default_rng(12)
    net = random_feasible_net(Basis2D(2), 3, rng)
    p = rng.uniform(0.01, 0.99, (100, 2))
    h = 1e-6
    J = net.forward(p).deriv
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (net(p + e) - net(p - e)) / (2 * h)
        np.testing.assert_allclose(J[:, :, d], fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("basis", [Basis1D(5), Basis2D(2), Basis2D(1, "sup")])
def test_serialization_round_trip_is_exact(basis):
    net = random_feasible_net(basis, 3, np.random.default_rng(4), eps=0.03)
    text = net.dumps()
    back = DiffeoNet.loads(text)
    assert back.basis == net.basis and back.eps == net.eps
    np.testing.assert_array_equal(back.weights, net.weights)
    doc = json.loads(text)
    assert set(doc) == {"dim", "epsilon", "basis", "layers"}
    assert len(doc["layers"]) == 3


def test_flat_weights_are_layer_major():
    W = np.arange(6.0).reshape(2, 3) * 0.01
    net = DiffeoNet(Basis1D(3), W)
    np.testing.assert_array_equal(net.weights, W.ravel())
    np.testing.assert_array_equal(net.with_weights(net.weights).weight_matrix, W)


def test_prepend_acts_first():
    b = Basis1D(2)
    a, c = np.array([0.3, 0.1]), np.array([-0.2, 0.2])
    x = np.linspace(0, 1, 17)
    net = DiffeoNet(b, [a]).prepend(c)
    np.testing.assert_allclose(net(x), nested_layers([c, a], x), atol=1e-15)
    net = DiffeoNet(b, [a]).append(c)
    np.testing.assert_allclose(net(x), nested_layers([a, c], x), atol=1e-15)
