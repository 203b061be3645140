import numpy as np
import pytest

from livsic_xray.catflow import (
    PeriodicOrbit,
    ScalarField,
    SuspensionModel,
    enumerate_orbits,
    flow_box_cover,
    local_coordinates,
)
from livsic_xray.livsic import (
    AssemblyError,
    HolderViolation,
    assemble_coboundary,
    build_dense_separated_orbit,
    coboundary_residual,
    common_holder,
    finite_livsic_check,
    fit_exponent,
    holder_constant,
    holder_extend,
    homoclinic_excursions,
    integrate_along_orbit,
    integrate_flow,
    orbit_data,
    orbit_primitive,
    xray,
    xray_many,
    xray_sup,
)


def W(x):
    return np.sin(2 * np.pi * x[:, 0]) + 0.5 * np.cos(2 * np.pi * x[:, 1])


def G(x):
    return np.cos(2 * np.pi * (x[:, 0] + x[:, 1]))


@pytest.fixture(scope="module")
def model():
    return SuspensionModel()


@pytest.fixture(scope="module")
def w(model):
    return ScalarField.from_base(model, W, "w")


@pytest.fixture(scope="module")
def g(model):
    return ScalarField.from_base(model, G, "g")


@pytest.fixture(scope="module")
def orbit(model):
    # a period-7 orbit, long enough to cross several fibers
    return [o for o in enumerate_orbits(model, 8.0) if o.n == 7][3]


@pytest.fixture(scope="module")
def cover(model):
    return flow_box_cover(model)


@pytest.fixture(scope="module")
def report(model):
    return build_dense_separated_orbit(model, 1e-2)


# --- integration ---------------------------------------------------------------------


def test_integrate_zero_and_one(model, orbit):
    zero = ScalarField.constant(model, 0.0)
    one = ScalarField.constant(model, 1.0)
    for t in [0.0, 0.37, 2.5, orbit.period]:
        assert integrate_along_orbit(zero, orbit, t) == 0.0
        assert integrate_along_orbit(one, orbit, t) == pytest.approx(t, abs=1e-10)


def test_integrate_coboundary_is_difference(model, orbit, w):
    Xw = w.coboundary()
    x0 = orbit.start
    w0 = w(np.array([x0.x]), np.array([x0.height]))[0]
    for t in np.linspace(0.0, orbit.period, 9):
        x, s = orbit.state_at(np.array([t]))
        expect = w(x, s)[0] - w0
        assert integrate_along_orbit(Xw, orbit, t) == pytest.approx(expect, abs=1e-8)


def test_primitive_matches_adaptive(orbit, w, g):
    f = w.coboundary() + g.scale(0.3)
    prim = orbit_primitive(f, orbit)
    ts = np.linspace(0.0, orbit.period, 7)
    adaptive = [integrate_along_orbit(f, orbit, t) for t in ts]
    assert np.allclose(prim(ts), adaptive, atol=1e-9)


def test_integrate_flow_additive(model, g):
    rng = np.random.default_rng(3)
    x, s = model.sample_uniform(rng, 20)
    a = integrate_flow(g, x, s, 1.7)
    x1, s1 = model.flow(x, s, 1.7)
    b = integrate_flow(g, x1, s1, 0.9)
    assert np.allclose(a + b, integrate_flow(g, x, s, 2.6), atol=1e-12)
    # backwards is the negative of forwards from the endpoint
    assert np.allclose(integrate_flow(g, x1, s1, -1.7), -a, atol=1e-12)


def test_integrate_along_orbit_domain(orbit):
    one = ScalarField.constant(orbit.model, 1.0)
    with pytest.raises(ValueError):
        integrate_along_orbit(one, orbit, orbit.period + 1.0)


# --- x-ray ---------------------------------------------------------------------------


def test_xray_constant_and_coboundary(model, w):
    orbits = enumerate_orbits(model, 6.0)
    one = ScalarField.constant(model, 1.0)
    assert np.allclose(xray_many(one, orbits), 1.0, atol=1e-13)
    assert np.abs(xray_many(w.coboundary(), orbits)).max() < 1e-9


def test_xray_base_point_invariance(model, orbit, g):
    from livsic_xray.catflow import _orbit_exact

    pts = _orbit_exact(model, orbit.base_point, orbit.n)
    ref = xray(g, orbit)
    for k in range(1, orbit.n):
        shifted = PeriodicOrbit(model, pts[k], orbit.n)
        assert xray(g, shifted) == pytest.approx(ref, abs=1e-12)


def test_xray_step_halving(orbit, g):
    assert abs(xray(g, orbit, panels=4) - xray(g, orbit, panels=8)) < 1e-9


def test_xray_matches_adaptive(orbit, g):
    assert xray(g, orbit) == pytest.approx(integrate_along_orbit(g, orbit, orbit.period) / orbit.period, abs=1e-10)


def test_xray_sup_constant(model):
    c = ScalarField.constant(model, -0.75)
    assert xray_sup(c, 7.0) == pytest.approx(0.75, abs=1e-13)


def test_finite_livsic_coboundary_long_orbits(model, w):
    orbits = enumerate_orbits(model, 15.0)
    sup, _, _ = finite_livsic_check(w.coboundary(), 15.0, orbits=orbits)
    assert sup <= 1e-8
    sup_c, _, _ = finite_livsic_check(ScalarField.constant(model, 2.5), 15.0, orbits=orbits)
    assert sup_c == pytest.approx(2.5, abs=1e-12)


# --- dense orbit ---------------------------------------------------------------------


def test_excursions_are_homoclinic(model):
    exc = homoclinic_excursions(model, 0.022, kmax=2)
    assert len(exc) == 24
    for e in exc:
        # consecutive slots follow the map
        nxt = model.apply_A(e.slots[:-1])
        d = nxt - e.slots[1:]
        assert np.abs(d - np.round(d)).max() < 1e-12
        # both ends lie near the fixed point
        for p in (e.slots[0], e.slots[-1]):
            q = p - np.round(p)
            assert np.hypot(*q) < 0.022 * model.lam + 1e-12


def test_dense_orbit_report(model, report):
    assert report.period <= report.budget
    assert report.orbit.exact_closure()
    assert 0 < report.realized_density < 0.5
    assert report.realized_separation > 0
    assert report.rho0 > 0
    assert report.beta_d_fit > 0


def test_dense_orbit_density_brute_force(model, report):
    # independent check: random targets against a finer orbit sampling
    rng = np.random.default_rng(11)
    qx, qs = model.sample_uniform(rng, 300)
    _, x, s = report.samples(0.004, truncate=1.0)
    d = model.pairwise_distance(qx, qs, x, s).min(axis=1)
    assert d.max() <= report.realized_density + 0.01


def test_dense_orbit_separation(model, report):
    _, x, s = report.samples(0.013)
    x, s = x[:-1], s[:-1]
    d = model.pairwise_distance(x, s, x, s)
    i, j = np.nonzero(np.triu(d < model.epsilon0, 1))
    su, ss, t = local_coordinates(model, x[i], s[i], x[j], s[j])
    trans = np.maximum(np.abs(su), np.abs(ss))
    box = (trans < model.epsilon0) & (np.abs(t) < 0.1)
    ok = (trans < 1e-9) | (trans >= 0.99 * report.realized_separation)
    assert np.all(ok[box])


def test_dense_orbit_rejects_bad_eps(model):
    with pytest.raises(ValueError):
        build_dense_separated_orbit(model, 0.7)


def test_short_budget_uses_closed_orbit(model):
    rep = build_dense_separated_orbit(model, 0.1, measure=False)
    assert rep.n_points == 1
    assert rep.period <= 0.1**-0.5


def test_fit_exponent():
    x = np.array([1e-1, 1e-2, 1e-3])
    assert fit_exponent(x, 3 * x**0.25) == pytest.approx(0.25)


# --- Holder extension ----------------------------------------------------------------


def _cloud(model, n, seed):
    rng = np.random.default_rng(seed)
    return model.sample_uniform(rng, n)


def test_extension_agrees_on_data(model):
    x, s = _cloud(model, 60, 0)
    v = W(x) + 0.2 * s
    K, _ = holder_constant(model, x, s, v, 0.8)
    ext = holder_extend(model, x, s, v, 0.8, K)
    assert np.allclose(ext(x, s), v, atol=1e-9)


def test_extension_of_constant(model):
    x, s = _cloud(model, 40, 1)
    v = np.full(40, 1.25)
    K, _ = holder_constant(model, x, s, v, 0.5)
    assert K == 0.0
    ext = holder_extend(model, x, s, v, 0.5, K)
    qx, qs = _cloud(model, 100, 2)
    assert np.allclose(ext(qx, qs), 1.25)


def test_extension_holder_quotient(model):
    x, s = _cloud(model, 80, 3)
    v = np.random.default_rng(4).normal(size=80)
    beta = 0.6
    K, _ = holder_constant(model, x, s, v, beta)
    ext = holder_extend(model, x, s, v, beta, K)
    qx, qs = _cloud(model, 300, 5)
    u = ext(qx, qs)
    d = model.pairwise_distance(qx, qs, qx, qs)
    du = np.abs(u[:, None] - u[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(d > 0, du / d**beta, 0.0)
    assert q.max() <= K * (1 + 1e-6)


def test_extension_violation_witness(model):
    x = np.array([[0.2, 0.3], [0.21, 0.3]])
    s = np.array([0.5, 0.5])
    v = np.array([0.0, 1.0])
    with pytest.raises(HolderViolation) as err:
        holder_extend(model, x, s, v, 1.0, 1.0)
    assert set(err.value.witness) == {0, 1}


# --- assembly ------------------------------------------------------------------------


def test_zero_field_gives_zero(model, report, cover):
    dec = assemble_coboundary(ScalarField.constant(model, 0.0), report, cover, n_check=200)
    x, s = _cloud(model, 200, 6)
    u, h = dec.evaluate(x, s)
    assert np.abs(u).max() == 0.0
    assert np.abs(h).max() == 0.0


@pytest.fixture(scope="module")
def decomposition(model, report, cover, w, g):
    return assemble_coboundary(w.coboundary() + g.scale(1e-2), report, cover, n_check=400)


def test_h_vanishes_on_orbit(decomposition):
    assert decomposition.diagnostics["h_orbit_max"] <= 1e-8


def test_coboundary_identity(decomposition):
    # the raw centered difference carries an O(dt^2) error; extrapolation removes it
    raw = coboundary_residual(decomposition, n=300, dt=1e-5)
    raw2 = coboundary_residual(decomposition, n=300, dt=2e-5)
    assert raw2 / raw == pytest.approx(4.0, rel=0.05)
    assert coboundary_residual(decomposition, n=300, dt=1e-5, extrapolate=True) <= 1e-6


def test_u_minus_w_constant_along_orbit(model, report, cover, w):
    dec = assemble_coboundary(w.coboundary(), report, cover, n_check=100)
    t = np.linspace(0.2, report.period - 1.2, 50)
    x, s = report.orbit.state_at(t)
    u, _ = dec.evaluate(x, s, orbit_time=t)
    diff = u - w(x, s)
    assert np.ptp(diff) < 1e-3


def test_explicit_K_is_checked(model, report, cover, w):
    with pytest.raises(HolderViolation):
        assemble_coboundary(w.coboundary(), report, cover, beta1=0.9, K=1e-3)
    with pytest.raises(ValueError):
        assemble_coboundary(w.coboundary(), report, cover, K=5.0)


def test_cover_model_mismatch(report, w):
    other = flow_box_cover(SuspensionModel(roof_amplitude=0.05))
    with pytest.raises(AssemblyError):
        assemble_coboundary(w.coboundary(), report, other)


def test_common_holder_shared_modulus(model, report, w, g):
    f = w.coboundary() + g.scale(0.1)
    data = orbit_data(f, report)
    beta, K = common_holder(model, [data, data])
    assert K <= 10
    assert holder_constant(model, data.x, data.s, data.values, beta)[0] == pytest.approx(K)


def test_finite_livsic_bound(model, report, cover, w, g):
    f = w.coboundary() + g.scale(0.1)
    dec = assemble_coboundary(f, report, cover, n_check=200)
    sup, hs, ok = finite_livsic_check(f, 8.0, dec)
    assert ok and sup <= hs
