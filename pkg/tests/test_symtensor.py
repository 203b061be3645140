import itertools
from math import factorial, pi

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from livsic_xray.sphere import SphereQuadrature, monomial_integral, sphere_rule, sphere_volume
from livsic_xray.symtensor import (
    CotangentDirection,
    DimensionError,
    EuclideanSpace,
    OrderError,
    QuadratureDegreeError,
    SymTensor,
    adjoint_I,
    c_nm,
    c_nm_quadrature,
    contract_xi,
    harmonic_decompose,
    harmonic_degree_residual,
    harmonic_recompose,
    multiply_xi,
    proj_ker_i_xi,
    pullback_eval,
    pushforward,
    pushpull_on_trace_free,
    symbol_sigma_m,
    symmetrize,
    trace_free_basis,
    trace_g,
    verify_symbol_projection,
)


# --- independent oracles ------------------------------------------------------------


def sym_oracle(T):
    """Permutation average by explicit index loops."""
    m, d = T.ndim, T.shape[0]
    out = np.zeros_like(T)
    for idx in itertools.product(range(d), repeat=m):
        out[idx] = sum(T[tuple(idx[p] for p in perm)] for perm in itertools.permutations(range(m))) / factorial(m)
    return out


def sphere_moment(d, i, j):
    """int v_i v_j dS over S^{d-1}."""
    return sphere_volume(d) / d if i == j else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- quadrature ---------------------------------------------------------------------


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("degree", [2, 5, 8])
def test_sphere_rule_exact(d, degree):
    Q = sphere_rule(d, degree)
    assert abs(Q.weights.sum() - sphere_volume(d)) < 1e-10 * sphere_volume(d)
    assert np.all(Q.weights > 0)
    assert np.abs(np.linalg.norm(Q.nodes, axis=1) - 1).max() < 1e-12
    assert Q.exactness_residual() < 1e-12


def test_sphere_rule_metric_unit_nodes(rng):
    A = rng.standard_normal((3, 3))
    g = A @ A.T + 3 * np.eye(3)
    Q = sphere_rule(3, 6, metric=g)
    norms = np.sqrt(np.einsum("ni,ij,nj->n", Q.nodes, g, Q.nodes))
    assert np.abs(norms - 1).max() < 1e-12
    assert Q.exactness_residual() < 1e-12


def test_quadrature_text_roundtrip():
    Q = sphere_rule(3, 4)
    R = SphereQuadrature.from_text(Q.to_text())
    assert R.degree == 4
    assert np.array_equal(R.nodes, Q.nodes)
    assert np.array_equal(R.weights, Q.weights)
    assert all(len(line.split()) == 4 for line in Q.to_text().splitlines()[1:])


def test_monomial_integral_known():
    assert monomial_integral((0, 0, 0)) == pytest.approx(4 * pi)
    assert monomial_integral((2, 0, 0)) == pytest.approx(4 * pi / 3)
    assert monomial_integral((1, 1, 0)) == 0.0


# --- space and storage --------------------------------------------------------------


def test_space_invariants(rng):
    A = rng.standard_normal((3, 3))
    E = EuclideanSpace(A @ A.T + np.eye(3))
    assert np.allclose(E.g @ E.g_inv, np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        EuclideanSpace(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_storage_symmetric_and_positive(rng):
    E = EuclideanSpace.euclidean(3)
    f = SymTensor.random(E, 3, rng)
    F = f.full()
    for perm in itertools.permutations(range(3)):
        assert np.array_equal(F, F.transpose(perm))
    assert f.inner(f) > 0
    assert f.inner(f) == pytest.approx(np.sum(F * F))


# --- symmetrize ---------------------------------------------------------------------


def test_symmetrize_fixes_symmetric(rng):
    E = EuclideanSpace.euclidean(3)
    f = SymTensor.random(E, 2, rng)
    assert np.allclose(symmetrize(f.full(), E).coeffs, f.coeffs, atol=1e-14)


def test_symmetrize_e1_e2():
    E = EuclideanSpace.euclidean(2)
    T = np.zeros((2, 2))
    T[0, 1] = 1
    assert np.allclose(symmetrize(T, E).full(), [[0, 0.5], [0.5, 0]])


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_symmetrize_matches_oracle_and_idempotent(rng, m):
    E = EuclideanSpace.euclidean(3)
    T = rng.standard_normal((3,) * m)
    S = symmetrize(T, E)
    assert np.abs(S.full() - sym_oracle(T)).max() < 1e-12
    assert np.abs(symmetrize(S.full(), E).full() - S.full()).max() < 1e-12


def test_symmetrize_self_adjoint(rng):
    E = EuclideanSpace.euclidean(3)
    T1, T2 = rng.standard_normal((2, 3, 3, 3))
    lhs = np.sum(symmetrize(T1, E).full() * T2)
    rhs = np.sum(T1 * symmetrize(T2, E).full())
    assert abs(lhs - rhs) < 1e-12


def test_symmetrize_dimension_error():
    with pytest.raises(DimensionError):
        symmetrize(np.zeros((2, 3)), EuclideanSpace.euclidean(3))


# --- trace and I --------------------------------------------------------------------


def test_trace_of_identity():
    E = EuclideanSpace.euclidean(3)
    assert float(trace_g(SymTensor.from_full(E, np.eye(3))).coeffs[0]) == pytest.approx(3.0)


def test_trace_order_error():
    E = EuclideanSpace.euclidean(3)
    with pytest.raises(OrderError):
        trace_g(SymTensor.random(E, 1, np.random.default_rng(0)))


@pytest.mark.parametrize("general", [False, True])
def test_trace_adjointness(rng, general):
    if general:
        A = rng.standard_normal((3, 3))
        E = EuclideanSpace(A @ A.T + np.eye(3))
    else:
        E = EuclideanSpace.euclidean(3)
    u = SymTensor.random(E, 1, rng)
    f = SymTensor.random(E, 3, rng)
    assert abs(adjoint_I(u).inner(f) - u.inner(trace_g(f))) < 1e-12


def test_trace_free_basis_is_trace_free():
    E = EuclideanSpace.euclidean(3)
    B = trace_free_basis(E, 2)
    assert B.shape[1] == 5
    for col in B.T:
        assert np.abs(trace_g(SymTensor(E, 2, col)).coeffs).max() < 1e-13


# --- pullback / pushforward ---------------------------------------------------------


def test_pullback_metric_is_one(rng):
    E = EuclideanSpace.euclidean(4)
    g = SymTensor.from_full(E, E.g)
    v = E.random_unit(rng, 20)
    assert np.abs(pullback_eval(g, v) - 1).max() < 1e-14
    assert np.all(pullback_eval(SymTensor.zeros(E, 3), v) == 0)


def test_pullback_ignores_symmetrization(rng):
    E = EuclideanSpace.euclidean(3)
    T = rng.standard_normal((3, 3, 3))
    v = E.random_unit(rng)
    direct = np.einsum("ijk,i,j,k->", T, v, v, v)
    assert abs(pullback_eval(symmetrize(T, E), v) - direct) < 1e-13


def test_pushforward_scalar_volume():
    E = EuclideanSpace.euclidean(3)
    Q = E.sphere(4)
    f = pushforward(np.ones(len(Q)), 0, Q, E)
    assert abs(f.coeffs[0] - 4 * pi) < 1e-10


def test_pushforward_linear(rng):
    E = EuclideanSpace.euclidean(3)
    Q = E.sphere(6)
    u = SymTensor.random(E, 1, rng)
    f = pushforward(pullback_eval(u, Q.nodes), 1, Q, E)
    oracle = np.array([sum(sphere_moment(3, i, j) * u.coeffs[j] for j in range(3)) for i in range(3)])
    assert np.abs(f.coeffs - oracle).max() < 1e-12
    assert np.allclose(f.coeffs, 4 * pi / 3 * u.coeffs)


def test_pushforward_adjoint(rng):
    E = EuclideanSpace.euclidean(3)
    Q = E.sphere(8)
    f = SymTensor.random(E, 2, rng)
    h = rng.standard_normal(len(Q))
    lhs = Q.integrate(pullback_eval(f, Q.nodes) * h)
    rhs = f.inner(pushforward(h, 2, Q, E))
    assert abs(lhs - rhs) < 1e-10


def test_pushforward_degree_guard():
    E = EuclideanSpace.euclidean(3)
    Q = E.sphere(3)
    with pytest.raises(QuadratureDegreeError):
        pushforward(np.ones(len(Q)), 1, Q, E)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_pushpull_scalar_and_vector(d):
    E = EuclideanSpace.euclidean(d)
    lam0, off0, _ = pushpull_on_trace_free(E, 0)
    lam1, off1, _ = pushpull_on_trace_free(E, 1)
    assert lam0 == pytest.approx(sphere_volume(d), rel=1e-12)
    assert lam1 == pytest.approx(sphere_volume(d) / d, rel=1e-12)
    assert off0 < 1e-8 and off1 < 1e-8


@pytest.mark.parametrize("m", [2, 3])
def test_pushpull_scalar_multiple_on_trace_free(m):
    E = EuclideanSpace.euclidean(3)
    lam, off, _ = pushpull_on_trace_free(E, m)
    assert lam > 0
    assert off < 1e-8


# --- projection and symbol ----------------------------------------------------------


def random_xi(rng, E):
    return CotangentDirection(E, rng.standard_normal(E.d))


def test_projection_properties(rng):
    E = EuclideanSpace.euclidean(3)
    xi = random_xi(rng, E)
    f = SymTensor.random(E, 3, rng)
    p = proj_ker_i_xi(f, xi)
    assert np.abs(contract_xi(p, xi).coeffs).max() < 1e-10
    assert np.abs(proj_ker_i_xi(p, xi).coeffs - p.coeffs).max() < 1e-10
    h1 = SymTensor.random(E, 2, rng)
    assert np.abs(proj_ker_i_xi(multiply_xi(h1, xi), xi).coeffs).max() < 1e-10


def test_c_nm_values():
    assert c_nm(1, 0) == pytest.approx(pi, abs=1e-12)
    assert c_nm(2, 0) == pytest.approx(2.0, abs=1e-12)
    assert c_nm(2, 1) == pytest.approx(4 / 3, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("m", [0, 1, 2, 3, 4])
def test_c_nm_against_quadrature(n, m):
    oracle = quad(lambda t: np.sin(t) ** (n - 1 + 2 * m), 0, pi, epsabs=0.0, epsrel=1e-12)[0]
    assert abs(c_nm(n, m) - oracle) < 1e-10 * oracle
    assert abs(c_nm_quadrature(n, m) - oracle) < 1e-10 * oracle


def test_symbol_scalar_value():
    E = EuclideanSpace.euclidean(3)
    xi = CotangentDirection(E, [0.0, 0.0, 2.0])
    S = symbol_sigma_m(xi, 0)
    # (2 pi / C_{2,0}) |xi|^{-1} Vol(S^2)
    assert S.matrix[0, 0] == pytest.approx(4 * pi**2 / 2, rel=1e-12)


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_symbol_structure(d, m):
    rng = np.random.default_rng(10 * d + m)
    E = EuclideanSpace.euclidean(d)
    for _ in range(3):
        xi = random_xi(rng, E)
        S = symbol_sigma_m(xi, m)
        assert S.symmetry_residual() < 1e-10
        assert S.eigenvalues().min() > -1e-10
        assert S.restricted_min_eigenvalue() > 0
        S2 = symbol_sigma_m(xi.scaled(2.0), m)
        assert np.abs(S2.matrix - 0.5 * S.matrix).max() < 1e-10
        if m >= 1:
            h1 = SymTensor.random(E, m - 1, rng)
            assert np.abs(S.apply(multiply_xi(h1, xi)).coeffs).max() < 1e-9


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_symbol_projection_identity(d, m):
    rng = np.random.default_rng(100 + 10 * d + m)
    E = EuclideanSpace.euclidean(d)
    xi = random_xi(rng, E)
    f = SymTensor.random(E, m, rng)
    h = SymTensor.random(E, m, rng)
    assert verify_symbol_projection(f, h, xi) < 1e-8
    assert verify_symbol_projection(SymTensor.zeros(E, m), SymTensor.zeros(E, m), xi) == 0.0


def test_symbol_projection_vanishes_on_range():
    rng = np.random.default_rng(7)
    E = EuclideanSpace.euclidean(3)
    xi = random_xi(rng, E)
    f = multiply_xi(SymTensor.random(E, 1, rng), xi)
    h = SymTensor.random(E, 2, rng)
    assert verify_symbol_projection(f, h, xi) < 1e-9


def test_symbol_projection_general_metric(rng):
    A = rng.standard_normal((3, 3))
    E = EuclideanSpace(A @ A.T + np.eye(3))
    xi = random_xi(rng, E)
    f, h = SymTensor.random(E, 2, rng), SymTensor.random(E, 2, rng)
    assert verify_symbol_projection(f, h, xi) < 1e-8


# --- harmonic decomposition ---------------------------------------------------------


def test_harmonic_trace_free_unchanged():
    E = EuclideanSpace.euclidean(3)
    u = SymTensor(E, 2, trace_free_basis(E, 2)[:, 0])
    parts = harmonic_decompose(u)
    assert np.abs(parts[0].coeffs - u.coeffs).max() < 1e-12
    assert np.abs(parts[1].coeffs).max() < 1e-12


def test_harmonic_metric_is_pure_trace():
    E = EuclideanSpace.euclidean(4)
    parts = harmonic_decompose(SymTensor.from_full(E, E.g))
    assert np.abs(parts[0].coeffs).max() < 1e-12
    assert parts[1].coeffs[0] == pytest.approx(1.0)


@pytest.mark.parametrize("m", [2, 3, 4])
def test_harmonic_roundtrip(rng, m):
    E = EuclideanSpace.euclidean(3)
    u = SymTensor.random(E, m, rng)
    parts = harmonic_decompose(u)
    assert len(parts) == m // 2 + 1
    assert np.abs(harmonic_recompose(parts).coeffs - u.coeffs).max() < 1e-10
    for p in parts:
        if p.order >= 2:
            assert np.abs(trace_g(p).coeffs).max() < 1e-10
    for k, p in enumerate(parts):
        assert harmonic_degree_residual(p, k) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.integers(0, 3))
def test_adjointness_property(seed, d, m):
    rng = np.random.default_rng(seed)
    E = EuclideanSpace.euclidean(d)
    u = SymTensor.random(E, m, rng)
    f = SymTensor.random(E, m + 2, rng)
    assert abs(adjoint_I(u).inner(f) - u.inner(trace_g(f))) < 1e-10 * (1 + u.norm() * f.norm())
