import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from joyce_painleve.errors import FamilyMismatch
from joyce_painleve.families import BasePoint, FamilyId, FiberPoint
from joyce_painleve.isomonodromy import displaced
from joyce_painleve.joyce import (DIRECTIONS, EULER_WEIGHTS, PLEBANSKI_WEIGHT, ThetaCoords,
                                  euler_rescale, heavenly_residual, involution_piii,
                                  joyce_connection, k_third_derivatives, k_third_derivatives_fd,
                                  plebanski_w, plebanski_w_general, prepotential_s,
                                  theta_inverse, theta_map, vertical_fields)
from joyce_painleve.numerics import contour_derivative
from joyce_painleve.sampling import random_base, random_fiber

FAMILIES = ["PI", "PII", "PIII3"]
seeds = st.integers(0, 2 ** 32 - 1)


def _fiber(family, seed, joyce=False, **kw):
    rng = np.random.default_rng(seed)
    return random_fiber(random_base(family, rng, joyce=joyce), rng, **kw)


@settings(max_examples=10)
@given(seeds, st.sampled_from(FAMILIES))
def test_theta_backends_agree(seed, family):
    fp = _fiber(family, seed)
    a, b = theta_map(fp, "uniformization"), theta_map(fp, "periods")
    assert a.equivalent(b)


@settings(max_examples=10)
@given(seeds, st.sampled_from(FAMILIES))
def test_theta_round_trip(seed, family):
    fp = _fiber(family, seed)
    back = theta_inverse(fp.base, theta_map(fp))
    if fp.family is FamilyId.PIII3 and abs(back.q - fp.q) > 1e-6:
        back = involution_piii(back)
    assert abs(back.q - fp.q) < 1e-7 * max(1, abs(fp.q))
    assert abs(back.p - fp.p) < 1e-7 * max(1, abs(fp.p))
    assert abs(back.r - fp.r) < 1e-7


def test_theta_lattice_ambiguity():
    fp = _fiber("PII", 8)
    th = theta_map(fp)
    lat = np.array(th.lattice)
    shifted = ThetaCoords(th.family, *(th.vector + lat[0] - 2 * lat[1]),
                          th.theta_alpha, th.lattice)
    assert th.distance(shifted) < 1e-10
    assert th.negated().theta_first == -th.theta_first


def test_theta_alpha_coordinate():
    fp = _fiber("PII", 9, s_radius=0.5)
    assert theta_map(fp).theta_alpha == 0.5 - fp.s


@pytest.mark.parametrize("family", FAMILIES)
def test_vertical_fields_are_coordinate_fields(family):
    fp = _fiber(family, 21, joyce=True)
    th0 = theta_map(fp, with_lattice=False)
    for name, v in vertical_fields(fp).items():
        if name == "alpha":
            continue
        assert np.all(v[:3] == 0)
        d = [contour_derivative(lambda h: getattr(theta_map(displaced(fp, v, h), near=th0.theta_first,
                                                            with_lattice=False), attr),
                                0j, radius=1e-3)
             for attr in ("theta_first", "theta_H")]
        expected = [1, 0] if name == DIRECTIONS[fp.family][0] else [0, 1]
        assert np.allclose(d, expected, atol=1e-8)


def test_plebanski_examples():
    fp = FiberPoint(BasePoint("PIII3", 1, 3), 1, math.sqrt(5))
    assert abs(plebanski_w(fp) - math.sqrt(5) / 30) < 1e-15
    fp = FiberPoint(BasePoint("PII", 1, 1), 1, 2)
    assert abs(plebanski_w(fp) - 1 / 168) < 1e-15


@settings(max_examples=20)
@given(seeds)
def test_pii_general_reduces_to_special(seed):
    fp = _fiber("PII", seed, joyce=True)
    assert abs(plebanski_w_general(fp) - plebanski_w(fp)) < 1e-10 * max(1, abs(plebanski_w(fp)))


def test_pii_general_needs_pii():
    with pytest.raises(FamilyMismatch):
        plebanski_w_general(_fiber("PI", 1))


def test_euler_weights_trivial():
    assert EULER_WEIGHTS[FamilyId.PIII3] == {"t": 4, "H": 2, "q": -2, "p": 3, "r": 0}
    assert PLEBANSKI_WEIGHT == -1


@settings(max_examples=15)
@given(seeds, st.sampled_from(FAMILIES), st.floats(-3, 3), st.floats(0, 2 * math.pi))
def test_plebanski_homogeneity(seed, family, log_mod, phi):
    fp = _fiber(family, seed, joyce=True)
    lam = complex(log_mod / 3, phi)
    scaled = euler_rescale(fp, lam)
    assert abs(scaled.p ** 2 - scaled.base.q0(scaled.q)) < 1e-9 * max(1, abs(scaled.p) ** 2)
    w = plebanski_w(fp)
    assert abs(plebanski_w(scaled) - cmath.exp(-lam) * w) < 1e-10 * max(1, abs(w))


def test_euler_rescale_pii_slice():
    with pytest.raises(FamilyMismatch):
        euler_rescale(_fiber("PII", 2, s_radius=0.5), 0.1)


@pytest.mark.parametrize("family", ["PII", "PIII3"])
def test_k_third_derivatives_against_flows(family):
    for seed in range(2):
        fp = _fiber(family, seed, joyce=True)
        fd, _ = k_third_derivatives_fd(fp)
        exact = k_third_derivatives(fp)
        for key, val in fd.items():
            ref = exact[key]
            assert abs(val - ref) < 1e-6 * (abs(ref) if abs(ref) > 1e-12 else 1.0), key


def test_k_third_derivatives_symmetric():
    exact = k_third_derivatives(_fiber("PIII3", 4))
    assert exact[("s", "H", "H")] == exact[("H", "s", "H")] == exact[("H", "H", "s")]


@pytest.mark.parametrize("family", FAMILIES)
def test_heavenly_equation(family):
    fp = _fiber(family, 13, joyce=True)
    assert abs(heavenly_residual(fp)) < 1e-5


@pytest.mark.parametrize("family", FAMILIES)
def test_prepotential_gradient(family):
    pre = prepotential_s(random_base(family, np.random.default_rng(17), joyce=True))
    assert np.max(np.abs(np.subtract(pre.gradient, pre.fd_gradient))) < 1e-5


def test_joyce_connection_pii():
    con = joyce_connection(BasePoint("PII", 0.4 + 0.2j, 0.9 - 0.3j))
    assert abs(con.third[("t", "t", "t")] + 0.25) < 1e-6
    assert con.flat_residual < 1e-6
    assert con.flat_coordinates == ("t", "H - t^2/8")


def test_joyce_connection_piii3_flat():
    con = joyce_connection(BasePoint("PIII3", 1.3 - 0.4j, 0.6 + 0.2j))
    assert con.flat_residual < 1e-6


def test_joyce_connection_rejects_pi():
    with pytest.raises(FamilyMismatch):
        joyce_connection(BasePoint("PI", 0.3, 0.8))


@settings(max_examples=10)
@given(seeds)
def test_piii3_involution(seed):
    fp = _fiber("PIII3", seed)
    img = involution_piii(fp)
    assert abs(img.p ** 2 - img.base.q0(img.q)) < 1e-9 * max(1, abs(img.p) ** 2)
    assert abs(plebanski_w(img) - plebanski_w(fp)) < 1e-9 * max(1, abs(plebanski_w(fp)))
    assert theta_map(img).equivalent(theta_map(fp))
    back = involution_piii(img)
    assert abs(back.q - fp.q) < 1e-12 * abs(fp.q) and abs(back.r - fp.r) < 1e-12
