import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from joyce_painleve.errors import PoleHit, SingularCurve
from joyce_painleve.families import PAIRING, BasePoint, FamilyId, FiberPoint
from joyce_painleve.numerics import fd_derivative
from joyce_painleve.sampling import random_base, random_fiber
from joyce_painleve.spectral import (CurvePoint, bilinear_pairing, branch_points, cycle_basis,
                                     differential_eval, period, period_matrix, z_coords)

FAMILIES = ["PI", "PII", "PIII3"]


def test_pairing_normalization_trivial():
    assert PAIRING == {FamilyId.PI: 1, FamilyId.PII: 1, FamilyId.PIII3: 2}


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("method", ["elliptic", "quadrature"])
def test_bilinear_relation(family, method, rng):
    for _ in range(2):
        base = random_base(family, rng, joyce=True)
        val = bilinear_pairing("omega", "beta_t_or_s", cycle_basis(base), base, method)
        assert abs(val - 2j * math.pi * PAIRING[FamilyId.parse(family)]) < 1e-9


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32 - 1))
def test_bilinear_relation_property(seed):
    rng = np.random.default_rng(seed)
    family = FAMILIES[seed % 3]
    base = random_base(family, rng, joyce=True)
    val = bilinear_pairing("omega", "beta_t_or_s", cycle_basis(base), base)
    assert abs(val - 2j * math.pi * PAIRING[FamilyId.parse(family)]) < 1e-9


@pytest.mark.parametrize("alpha", [0, 0.25, 0.3 - 0.2j])
def test_pii_third_coordinate_exact(alpha):
    base = BasePoint("PII", 0.4 + 0.1j, 0.7, alpha)
    z = z_coords(base)
    assert len(z) == 3 and z[2] == 2j * math.pi * alpha


@pytest.mark.parametrize("family", FAMILIES)
def test_backends_agree(family, rng):
    base = random_base(family, rng, joyce=True)
    cycles = cycle_basis(base)
    for form in ("lambda", "omega", "beta_t_or_s"):
        for c in cycles[:2]:
            a = period(form, c, base, "elliptic")
            b = period(form, c, base, "quadrature")
            assert abs(a - b) < 1e-9 * max(1, abs(b))


def test_period_matrix_shape(rng):
    base = random_base("PII", rng)
    cycles = cycle_basis(base)
    assert len(cycles) == 3
    m = period_matrix(base, cycles)
    assert m.shape == (2, 2)
    assert abs(np.linalg.det(m) + 2j * math.pi) < 1e-9


@pytest.mark.parametrize("family", FAMILIES)
def test_period_derivatives(family, rng):
    # d z / d H is the omega period, d z / d t the beta period (fixed cycles)
    base = random_base(family, rng, joyce=True)
    cycles = cycle_basis(base)
    for i, c in enumerate(cycles[:2]):
        dH = fd_derivative(lambda h: period("lambda", c, base.with_(H=h), "quadrature"),
                           base.H, [1.0]).value
        dt = fd_derivative(lambda t: period("lambda", c, base.with_(t=t), "quadrature"),
                           base.t, [1.0]).value
        om = period("omega", c, base)
        be = period("beta_t_or_s", c, base)
        assert abs(dH - om) < 1e-6 * max(1, abs(om))
        if family == "PIII3":
            dt *= base.t  # beta is the s = log t derivative
        assert abs(dt - be) < 1e-6 * max(1, abs(be))


def test_branch_points_examples():
    rep = branch_points(BasePoint("PII", 0, 1))
    xs = [pt.x for pt in rep.points]
    assert len(xs) == 4
    for x in xs:
        assert abs(x ** 4 + 2) < 1e-12
    assert len(branch_points(BasePoint("PI", 0.3, 0.8)).points) == 3


def test_singular_base_rejected():
    with pytest.raises(SingularCurve):
        cycle_basis(BasePoint("PI", 0, 0))


def test_pole_hit():
    base = BasePoint("PIII3", 1, 3)
    with pytest.raises(PoleHit):
        differential_eval("omega", base, CurvePoint(0j, 1.0))
    rep = branch_points(base)
    with pytest.raises(PoleHit):
        differential_eval("omega", base, rep.points[0])
