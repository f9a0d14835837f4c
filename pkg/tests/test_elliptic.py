import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from joyce_painleve.elliptic import (abel_map, elliptic_data, half_periods, reduce_to_weierstrass,
                                     weierstrass_eval)
from joyce_painleve.errors import LatticePoint, OffCurve, SingularCurve
from joyce_painleve.families import BasePoint
from joyce_painleve.numerics import fd_derivative
from joyce_painleve.sampling import random_base

LEMNISCATIC_G2_4 = 1.3110287771460598   # scipy quad oracle, see test_numerics
LEMNISCATIC_G2_1 = special.gamma(0.25) ** 2 / (4 * math.sqrt(math.pi))

invariant = st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)
small_u = st.complex_numbers(min_magnitude=0.05, max_magnitude=1.5)


def _data(g2, g3):
    if abs(g2 ** 3 - 27 * g3 ** 2) < 1e-2:
        return None
    return elliptic_data(g2, g3)


def _away_from_lattice(u, ed, margin=0.05):
    a, b = ed.lattice_coords(u)
    w1, w2 = ed.periods
    d = u - round(a) * w1 - round(b) * w2
    return abs(d) > margin * min(abs(w1), abs(w2))


def test_reduction_examples():
    red = reduce_to_weierstrass(BasePoint("PIII3", 1, 3))
    assert (red.data.g2, red.data.g3) == pytest.approx((8, -4))
    red = reduce_to_weierstrass(BasePoint("PII", 0, 1))
    assert (red.data.g2, red.data.g3) == pytest.approx((2, 0))


@pytest.mark.parametrize("family", ["PI", "PII", "PIII3"])
def test_reduction_maps_are_inverse(family, rng):
    base = random_base(family, rng)
    red = reduce_to_weierstrass(base)
    g2, g3 = red.data.g2, red.data.g3
    for _ in range(20):
        x = complex(*rng.uniform(-2, 2, 2))
        y = cmath.sqrt(base.q0(x))
        X, Y = red.forward(x, y)
        assert abs(Y * Y - (4 * X ** 3 - g2 * X - g3)) < 1e-9 * max(1, abs(X) ** 3)
        x2, y2 = red.inverse(X, Y)
        assert abs(x2 - x) < 1e-10 * max(1, abs(x)) and abs(y2 - y) < 1e-10 * max(1, abs(y))


def test_lemniscatic_half_periods():
    assert abs(elliptic_data(4, 0).half_period_1 - LEMNISCATIC_G2_4) < 1e-10
    w1 = elliptic_data(1, 0).half_period_1
    assert abs(w1 - LEMNISCATIC_G2_1) < 1e-10
    assert abs(LEMNISCATIC_G2_1 - 1.854075) < 1e-6


def test_real_half_period_against_quadrature():
    g2, g3 = 7.0, 2.0
    ed = elliptic_data(g2, g3)
    e1 = max(np.roots([4, 0, -g2, -g3]).real)
    # x = e1 + u^2 removes the endpoint singularity
    f = lambda u: 2 * u / math.sqrt(4 * (e1 + u * u) ** 3 - g2 * (e1 + u * u) - g3) if u else \
        2 / math.sqrt(12 * e1 * e1 - g2)
    val, _ = integrate.quad(f, 0, np.inf, epsabs=1e-13, epsrel=1e-12)
    assert min(abs(val - w) for w in (ed.half_period_1, ed.half_period_2)) < 1e-9


@given(invariant, invariant)
def test_legendre_and_orientation(g2, g3):
    ed = _data(g2, g3)
    if ed is None:
        return
    assert abs(ed.legendre_defect()) < 1e-10
    assert (ed.half_period_2 / ed.half_period_1).imag > 0


@given(invariant, invariant, st.floats(0.3, 3), st.floats(0, 2 * math.pi))
def test_half_period_homogeneity(g2, g3, mod, arg):
    ed = _data(g2, g3)
    if ed is None:
        return
    lam = mod * cmath.exp(1j * arg)
    scaled = elliptic_data(g2 / lam ** 4, g3 / lam ** 6)
    # the scaled lattice is lam times the original one
    for w in scaled.periods:
        a, b = ed.lattice_coords(w / lam)
        assert abs(a - round(a)) < 1e-9 and abs(b - round(b)) < 1e-9
    area = lambda w: abs((w[0].conjugate() * w[1]).imag)
    assert abs(area(scaled.periods) - abs(lam) ** 2 * area(ed.periods)) \
        < 1e-9 * abs(lam) ** 2 * area(ed.periods)


def test_half_periods_tuple():
    w1 = half_periods(4, 0)[0]
    assert abs(w1 - LEMNISCATIC_G2_4) < 1e-10


def test_half_period_values():
    ed = elliptic_data(1 + 2j, -0.5 + 0.3j)
    wp, dwp, _ = weierstrass_eval(ed.half_period_1, ed)
    assert abs(4 * wp ** 3 - ed.g2 * wp - ed.g3) < 1e-9
    assert abs(dwp) < 1e-8


@given(invariant, invariant, small_u)
def test_ode_quasi_periodicity_and_parity(g2, g3, u):
    ed = _data(g2, g3)
    if ed is None or not _away_from_lattice(u, ed):
        return
    wp, dwp, z = weierstrass_eval(u, ed)
    assert abs(dwp ** 2 - (4 * wp ** 3 - g2 * wp - g3)) < 1e-9 * max(1, abs(wp) ** 3)
    wpm, dwpm, zm = weierstrass_eval(-u, ed)
    scale = max(1, abs(wp))
    assert abs(wpm - wp) < 1e-10 * scale
    assert abs(dwpm + dwp) < 1e-10 * max(1, abs(dwp))
    assert abs(zm + z) < 1e-10 * max(1, abs(z))
    _, _, z_shift = weierstrass_eval(u + 2 * ed.half_period_1, ed)
    assert abs(z_shift - z - 2 * ed.eta_1) < 1e-9 * max(1, abs(z))


def test_zeta_derivative_is_minus_wp():
    ed = elliptic_data(2 - 1j, 0.7)
    u = 0.4 + 0.3j
    d = fd_derivative(lambda x: weierstrass_eval(x, ed)[2], u, [1.0]).value
    assert abs(d + weierstrass_eval(u, ed)[0]) < 1e-7


def test_zeta_laurent_start():
    t, H = 0.7, 0.4 - 0.2j
    g2 = (24 * H + t * t) / 12
    ed = elliptic_data(g2, t * (72 * H - t * t) / 216)
    u = 1e-2
    z = weierstrass_eval(u, ed)[2]
    assert abs(z - (1 / u - (H / 30 + t * t / 720) * u ** 3)) < 1e-9


def test_lattice_point_and_singular_curve():
    ed = elliptic_data(4, 0)
    with pytest.raises(LatticePoint):
        weierstrass_eval(2 * ed.half_period_1, ed)
    with pytest.raises(SingularCurve):
        elliptic_data(3, 1)


def test_abel_examples():
    ed = elliptic_data(4, 0)
    e1 = max(ed.roots, key=lambda z: z.real)
    u = abel_map(e1, 0, ed)
    a, b = ed.lattice_coords(u - ed.half_period_1)
    assert abs(a - round(a)) < 1e-9 and abs(b - round(b)) < 1e-9
    with pytest.raises(OffCurve):
        abel_map(1.0, 5.0, ed)


@given(invariant, invariant, small_u)
def test_abel_round_trip_and_parity(g2, g3, u):
    ed = _data(g2, g3)
    if ed is None or not _away_from_lattice(u, ed, 0.1):
        return
    X, Y, _ = weierstrass_eval(u, ed)
    v = abel_map(X, Y, ed)
    X2, Y2, _ = weierstrass_eval(v, ed)
    assert abs(X2 - X) < 1e-9 * max(1, abs(X)) and abs(Y2 - Y) < 1e-9 * max(1, abs(Y))
    w = abel_map(X, -Y, ed)
    a, b = ed.lattice_coords(v + w)
    assert abs(a - round(a)) < 1e-9 and abs(b - round(b)) < 1e-9
