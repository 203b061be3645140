import csv
import warnings
from math import acosh, cosh, pi, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from livsic_xray.hypflow import (
    CAYLEY,
    CAYLEY_INV,
    LETTERS,
    BandField,
    ConstantField,
    DomainError,
    FlowDerivative,
    FuchsianGroup,
    GeodesicClass,
    GeometryError,
    LinearField,
    UnitTangentState,
    _left,
    _rotate_pair,
    bolza_generators,
    classes_to_csv,
    enumerate_classes,
    enumerate_geodesics,
    from_disk,
    geodesic_flow,
    geometric_classes,
    load_generators,
    pairing_matrix,
    parry_average,
    resolvent_on_orbit,
    sample_liouville,
    to_disk,
    variance_pairing,
    xray_class,
    xray_classes,
)


@pytest.fixture(scope="module")
def group():
    return FuchsianGroup.bolza()


@pytest.fixture(scope="module")
def classes(group):
    return enumerate_classes(group, 8.0, 6)


@pytest.fixture(scope="module")
def field(group):
    return BandField.random(group, 2, np.random.default_rng(0))


def _same_coset(group, s1, s2, tol):
    a1, b1 = group.reduce_pairs(*to_disk(s1.frame))
    a2, b2 = group.reduce_pairs(*to_disk(s2.frame))
    # frames are defined up to sign
    d = min(abs(a1[0] - a2[0]) + abs(b1[0] - b2[0]), abs(a1[0] + a2[0]) + abs(b1[0] + b2[0]))
    return d < tol


def reduced_words(max_len=8):
    def ok(w):
        w = "".join(w)
        return all(w[i] != w[i + 1].swapcase() for i in range(len(w) - 1)) and w[0] != w[-1].swapcase()

    return st.lists(st.sampled_from(LETTERS), min_size=2, max_size=max_len).filter(ok).map("".join)


# --- group --------------------------------------------------------------------------


def test_group_invariants(group):
    for ch in "abcd":
        g = group.matrices[ch]
        assert abs(np.linalg.det(g) - 1) < 1e-12
        assert abs(np.trace(g)) > 2
    rel = group.word_matrix(group.relator)
    assert min(np.abs(rel - np.eye(2)).max(), np.abs(rel + np.eye(2)).max()) < 1e-9


def test_bad_generators_rejected():
    gens = bolza_generators()
    with pytest.raises(ValueError):
        FuchsianGroup([2 * gens[0]] + gens[1:])
    with pytest.raises(ValueError):
        FuchsianGroup([np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])] + gens[1:])
    with pytest.raises(ValueError):
        FuchsianGroup(gens, relator="abcdABCD")


def test_single_generator_length(group, classes):
    g = bolza_generators()[0]
    expect = 2 * acosh(abs(np.trace(g)) / 2)
    c = next(c for c in classes if c.word == "a")
    assert c.length == pytest.approx(expect, abs=1e-12)
    # the side pairing translates by twice the inradius
    assert expect == pytest.approx(2 * acosh(1 + sqrt(2)), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(reduced_words())
def test_cyclic_permutation_length(word):
    group = FuchsianGroup.bolza()
    ref = np.trace(group.word_matrix(word))
    for k in range(1, len(word)):
        assert np.trace(group.word_matrix(word[k:] + word[:k])) == pytest.approx(ref, abs=1e-10 * max(1, abs(ref)))


def test_lengths_recomputed(group, classes):
    for c in classes:
        t = abs(np.trace(group.word_matrix(c.word)))
        assert c.length == pytest.approx(2 * acosh(t / 2), abs=1e-10)
        assert c.trace > 2 and c.length > 0


def test_counts_monotone(group):
    counts = [len(enumerate_classes(group, 8.0, k)) for k in (3, 4, 5, 6)]
    assert counts == sorted(counts)
    by_length = [len(enumerate_classes(group, L, 5)) for L in (4.0, 6.0, 8.0)]
    assert by_length == sorted(by_length) and by_length[0] < by_length[-1]


def test_enumeration_dedupes_rotations_and_inverses(group, classes):
    words = {c.word for c in classes}
    assert len(words) == len(classes)
    for c in classes[:50]:
        assert c.word[::-1].swapcase() not in words or c.word[::-1].swapcase() == c.word
    oriented = enumerate_classes(group, 8.0, 6, oriented=True)
    assert len(oriented) > len(classes)


def test_word_cutoff_rejected(group):
    with pytest.raises(ValueError):
        enumerate_classes(group, 5.0, 0)


def test_systoles(group):
    geo = enumerate_geodesics(group, 3.1)
    # twelve systoles, the maximum in genus two
    assert len(geo) == 12
    assert all(c.length == pytest.approx(2 * acosh(1 + sqrt(2))) for c in geo)


def test_geodesics_cover_word_classes(group, classes):
    geo = enumerate_geodesics(group, 8.0)
    assert len(geometric_classes(group, geo)) == len(geo)
    assert len(geometric_classes(group, geo + classes)) == len(geo)
    assert len(geometric_classes(group, classes)) <= len(classes)
    assert len(enumerate_geodesics(group, 8.0, oriented=True)) == 2 * len(geo)


def test_geodesic_count_prime_geodesic_theorem(group):
    from scipy.special import expi

    n = len(enumerate_geodesics(group, 9.0, oriented=True))
    assert abs(n / expi(9.0) - 1) < 0.1


def test_classes_csv(tmp_path, classes):
    path = tmp_path / "classes.csv"
    classes_to_csv(classes[:10], path)
    rows = list(csv.DictReader(open(path)))
    assert [r["word"] for r in rows] == [c.word for c in classes[:10]]
    assert float(rows[0]["length"]) == pytest.approx(classes[0].length)


def test_load_generators(tmp_path, group):
    lines = []
    for ch in "abcd":
        gd = CAYLEY @ group.matrices[ch] @ CAYLEY_INV
        lines.append(" ".join(f"{x:.17g}" for z in gd.ravel() for x in (z.real, z.imag)))
    path = tmp_path / "gens.txt"
    path.write_text("# bolza\n" + "\n".join(lines) + "\n")
    g2 = load_generators(path)
    for ch in "abcd":
        assert np.allclose(g2.matrices[ch], group.matrices[ch], atol=1e-12)
    path.write_text("1 2 3\n")
    with pytest.raises(ValueError):
        load_generators(path)


# --- flow ---------------------------------------------------------------------------


def test_flow_zero(group):
    s = UnitTangentState.from_point(0.1 + 0.2j, 0.7)
    s0, word = geodesic_flow(group, s, 0.0)
    assert np.allclose(s0.frame, s.frame, atol=1e-12)
    assert word == ""


def test_flow_group_law(group):
    rng = np.random.default_rng(1)
    a, b = sample_liouville(group, rng, 5)
    for al, be in zip(a, b):
        s = UnitTangentState(from_disk(al, be))
        t1, t2 = rng.uniform(0.5, 4.0, 2)
        s1, _ = geodesic_flow(group, s, t1)
        s12, _ = geodesic_flow(group, s1, t2)
        s3, _ = geodesic_flow(group, s, t1 + t2)
        assert _same_coset(group, s12, s3, 1e-9)


def test_flow_state_angle_and_base():
    s = UnitTangentState.from_point(0.3 - 0.1j, 1.1)
    assert s.base == pytest.approx(0.3 - 0.1j, abs=1e-12)
    assert s.angle == pytest.approx(1.1, abs=1e-12)
    with pytest.raises(ValueError):
        UnitTangentState(2 * np.eye(2))


def test_axis_returns(group, classes):
    for c in classes[::25]:
        s = UnitTangentState(c.axis_frame())
        back, _ = geodesic_flow(group, s, c.length)
        assert _same_coset(group, back, s, 1e-8)


def test_reduction_cap():
    g = FuchsianGroup(bolza_generators(), max_iter=1)
    s = UnitTangentState.from_point(0.999, 0.0)
    with pytest.raises(GeometryError):
        g.reduce(s.frame[None])


# --- band fields --------------------------------------------------------------------


def test_band_respected(group, field):
    # Fourier modes in the fiber stop at the band
    n = 32
    w = np.array([0.1 + 0.05j, -0.2 + 0.3j, 0.4j])
    theta = 2 * pi * np.arange(n) / n
    for z in w:
        from livsic_xray.hypflow import _frame_at

        a, b = _frame_at(np.full(n, z), theta)
        c = np.fft.fft(field.eval_pairs(a, b)) / n
        k = np.abs(np.fft.fftfreq(n, 1 / n))
        assert np.abs(c[k > field.band]).max() < 1e-12
        assert np.abs(c[k <= field.band]).max() > 1e-6


def test_band_field_group_invariant(group, field):
    a, b = sample_liouville(group, np.random.default_rng(2), 50)
    ref = field.eval_pairs(a, b)
    for ch in "aBcD":
        A, B = group.word_pair(ch)
        assert np.allclose(field.eval_pairs(*_left(A, B, a, b)), ref, atol=1e-10)


def test_band_field_truncation(group, field):
    a, b = sample_liouville(group, np.random.default_rng(3), 200)
    assert field.truncation_error(from_disk(a, b)) < 1e-12


def test_liouville_mean_against_monte_carlo(group, field):
    a, b = sample_liouville(group, np.random.default_rng(4), 40000)
    v = field.eval_pairs(a, b)
    se = v.std() / sqrt(len(v))
    assert abs(v.mean() - field.liouville_mean()) < 4 * se
    assert field.centered().eval_pairs(a, b).mean() == pytest.approx(v.mean() - field.liouville_mean())


def test_sampler_area_law(group):
    # mass within hyperbolic radius r of the centre: 2 pi (cosh r - 1) / (4 pi)
    a, b = sample_liouville(group, np.random.default_rng(5), 20000)
    w = b / np.conj(a)
    assert group.in_domain(w).all()
    r = 0.8
    frac = np.mean(2 * np.arctanh(np.abs(w)) < r)
    expect = (cosh(r) - 1) / 2
    assert abs(frac - expect) < 4 * sqrt(expect * (1 - expect) / len(w))
    theta = 2 * np.angle(a)
    assert abs(np.mean(np.cos(theta))) < 0.03


# --- x-ray --------------------------------------------------------------------------


def test_xray_constant(group, classes):
    assert np.allclose(xray_classes(ConstantField(group, 1.0), classes[:200]), 1.0, atol=1e-13)


def test_xray_flow_derivative_vanishes(group, classes, field):
    vals = xray_classes(FlowDerivative(field), classes)
    assert np.abs(vals).max() <= 1e-6


def test_xray_odd_field_reverses_sign(group, classes):
    F = BandField.random(group, 1, np.random.default_rng(6), odd_only=True)
    fwd = xray_classes(F, classes[:40])
    rev = xray_classes(F, classes[:40], reverse=True)
    assert np.allclose(rev, -fwd, atol=1e-9)
    assert np.abs(fwd).max() > 1e-3


def test_xray_conjugate_representative(group, classes, field):
    for c in classes[::60]:
        ref = xray_class(field, c)
        for conj in ("b", "Ad"):
            word = conj + c.word + conj[::-1].swapcase()
            M = group.word_matrix(word)
            other = GeodesicClass(word, M, abs(np.trace(M)), c.length)
            assert xray_class(field, other) == pytest.approx(ref, abs=1e-9)


def test_xray_quadrature_converged(group, classes, field):
    sub = classes[::40]
    a = xray_classes(field, sub, per_unit=64)
    b = xray_classes(field, sub, per_unit=128)
    assert np.abs(a - b).max() < 1e-8
    with pytest.raises(ValueError):
        xray_classes(field, sub, n_quad=32)


def test_xray_list_of_fields(group, classes, field):
    other = BandField.random(group, 1, np.random.default_rng(7))
    both = xray_classes([field, other], classes[:20])
    assert np.allclose(both[1], xray_classes(other, classes[:20]))
    lin = LinearField([(2.0, field), (-1.0, other)], 0.5)
    assert np.allclose(xray_classes(lin, classes[:20]), 2 * both[0] - both[1] + 0.5)


# --- variance pairing ---------------------------------------------------------------


@pytest.fixture(scope="module")
def pairing(group):
    rng = np.random.default_rng(8)
    fields = [BandField.random(group, 2, rng) for _ in range(3)]
    fields.append(ConstantField(group, 1.0))
    fields.append(LinearField([(2.0, fields[0]), (-3.0, fields[1])]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return pairing_matrix(fields, T_max=10.0, n_samples=600, seed=3)


def test_pairing_constant_is_zero(pairing):
    val, se, _ = pairing
    assert np.abs(val[3]).max() < 1e-12
    assert np.abs(val[:, 3]).max() < 1e-12


def test_pairing_positive(pairing):
    val, se, _ = pairing
    for i in range(3):
        assert val[i, i] >= -3 * se[i, i]


def test_pairing_bilinear(pairing):
    val, se, _ = pairing
    for j in range(3):
        combo = 2 * val[0, j] - 3 * val[1, j]
        assert abs(val[4, j] - combo) <= 3 * se[4, j] + 1e-9


def test_pairing_symmetric(group):
    rng = np.random.default_rng(9)
    F1, F2 = BandField.random(group, 2, rng).centered(), BandField.random(group, 2, rng).centered()
    p12 = variance_pairing(F1, F2, T_max=8.0, n_samples=500, seed=1)
    p21 = variance_pairing(F2, F1, T_max=8.0, n_samples=500, seed=2)
    assert abs(p12["value"] - p21["value"]) <= 3 * np.hypot(p12["stderr"], p21["stderr"])
    assert p12["T_max"] == 8.0 and p12["tail"] >= 0


def test_pairing_warns_uncentred(group, field):
    F = LinearField([(1.0, field)], 5.0)
    with pytest.warns(UserWarning):
        variance_pairing(F, F, T_max=1.0, n_samples=200, seed=0)


# --- resolvent ----------------------------------------------------------------------


@pytest.mark.parametrize("lam", [0.1, 0.5, 1.0, 2.0])
def test_resolvent_constant(lam):
    value, c, direct = resolvent_on_orbit(np.ones(64), 3.7, lam)
    assert value == pytest.approx(1 / lam, rel=1e-14)
    assert direct == pytest.approx(1 / lam, rel=1e-9)


@pytest.mark.parametrize("lam", [0.1, 0.5, 1.0, 2.0])
def test_resolvent_multiplier_matches_direct(lam):
    rng = np.random.default_rng(10)
    ell = 4.3
    t = np.arange(64) * ell / 64
    f = 0.4 + sum(rng.normal() * np.cos(2 * pi * k * t / ell + rng.uniform(0, 2 * pi)) for k in range(1, 6))
    value, c, direct = resolvent_on_orbit(f, ell, lam)
    assert value == pytest.approx(direct, abs=1e-6)
    assert value >= abs(c[0]) ** 2 / lam


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.floats(0.05, 5.0), st.floats(0.5, 20.0))
def test_resolvent_lower_bound(vals, lam, ell):
    value, c, _ = resolvent_on_orbit(np.array(vals), ell, lam, direct=False)
    assert value >= abs(c[0]) ** 2 / lam * (1 - 1e-12) - 1e-300


def test_resolvent_domain():
    with pytest.raises(DomainError):
        resolvent_on_orbit(np.ones(8), 1.0, 0.0)
    with pytest.raises(ValueError):
        resolvent_on_orbit(np.ones(12), 1.0, 1.0)


# --- Parry averages -----------------------------------------------------------------


@pytest.fixture(scope="module")
def geodesics8(group):
    return enumerate_geodesics(group, 8.0, oriented=True)


def test_parry_constant(group, geodesics8):
    one = ConstantField(group, 1.0)
    for T in (6.0, 7.0, 8.0):
        assert parry_average(one, T, classes=geodesics8) == pytest.approx(1.0, abs=1e-12)


def test_parry_conjugacy_invariant(group, geodesics8, field):
    moved = []
    for c in geodesics8:
        word = c.word[1:] + c.word[0]
        moved.append(GeodesicClass(word, group.word_matrix(word), c.trace, c.length))
    a = parry_average(field, 8.0, classes=geodesics8)
    b = parry_average(field, 8.0, classes=moved)
    assert a == pytest.approx(b, abs=1e-9)


def test_parry_centered_small(group, geodesics8, field):
    assert abs(parry_average(field.centered(), 8.0, classes=geodesics8)) < 0.02


def test_parry_empty(group):
    with pytest.raises(DomainError):
        parry_average(ConstantField(group, 1.0), 1.0)


def test_rotation_pair_roundtrip():
    a, b = np.array([1.2 + 0.3j]), np.array([0.5 - 0.4j])
    a2, b2 = _rotate_pair(*_rotate_pair(a, b, 0.8), -0.8)
    assert np.allclose([a2, b2], [a, b])
