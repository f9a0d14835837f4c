import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from joyce_painleve.errors import NoPoleInSpan
from joyce_painleve.families import BasePoint, FamilyId, FiberPoint
from joyce_painleve.isomonodromy import (Trajectory, apparent_singularity_residual,
                                         apparent_singularity_residual_fp, flow_field,
                                         integrate_flow, oper_closed_form, oper_potential,
                                         parameter_square_defect, pole_fit,
                                         second_order_residual, zero_curvature_residual)
from joyce_painleve.sampling import random_base, random_fiber

FAMILIES = ["PI", "PII", "PIII3"]
seeds = st.integers(0, 2 ** 32 - 1)


def _fiber(family, seed, **kw):
    rng = np.random.default_rng(seed)
    return random_fiber(random_base(family, rng), rng, **kw), rng


@settings(max_examples=15)
@given(seeds, st.sampled_from(FAMILIES))
def test_oper_equivalence(seed, family):
    rng = np.random.default_rng(seed)
    eps = complex(*rng.uniform(0.5, 1.5, 2))
    fp = random_fiber(random_base(family, rng), rng, epsilon=eps, s_radius=0.5)
    x = fp.q + complex(*rng.uniform(0.3, 1.0, 2))
    a, b = oper_potential(fp, x), oper_closed_form(fp, x)
    assert abs(a - b) < 1e-8 * max(1.0, abs(b))


@settings(max_examples=15)
@given(seeds, st.sampled_from(FAMILIES))
def test_apparent_singularity(seed, family):
    fp, _ = _fiber(family, seed, s_radius=0.5)
    assert max(abs(v) for v in apparent_singularity_residual_fp(fp)) < 1e-8


def test_apparent_singularity_detects_off_constraint():
    base = BasePoint("PI", 0.3, 0.8)
    fp = FiberPoint.on_sheet(base, 0.4, 0.2, 0, 1, sheet=1)
    good = apparent_singularity_residual(base, fp.q, fp.p, fp.r)
    bad = apparent_singularity_residual(base, fp.q, fp.p * 1.1, fp.r)
    assert max(map(abs, good)) < 1e-8 and max(map(abs, bad)) > 1e-3


@pytest.mark.parametrize("family", ["PII", "PIII3"])
def test_zero_curvature(family):
    for seed in range(3):
        fp, rng = _fiber(family, seed)
        x = fp.q + complex(*rng.uniform(0.3, 1.0, 2))
        assert zero_curvature_residual(fp, x) < 1e-6


@pytest.mark.parametrize("family", FAMILIES)
def test_second_order_equation(family):
    fp, _ = _fiber(family, 11)
    assert second_order_residual(fp) < 1e-6


@pytest.mark.parametrize("family", ["PII", "PIII3"])
def test_flows_commute(family):
    fp, _ = _fiber(family, 5)
    d1, d2 = parameter_square_defect(fp, 1e-2), parameter_square_defect(fp, 1e-3)
    assert np.log10(d1 / d2) >= 2.7


@pytest.mark.parametrize("family", ["PII", "PIII3"])
def test_trajectory_reversal(family):
    fp, _ = _fiber(family, 3)
    t0 = fp.base.t
    fwd = integrate_flow(flow_field(family, "w1"), fp, [t0 + 0.4 + 0.2j])
    back = integrate_flow(flow_field(family, "w1"), fwd.final, [t0])
    end = back.final
    assert abs(end.q - fp.q) < 1e-8 * max(1, abs(fp.q))
    assert abs(end.p - fp.p) < 1e-8 * max(1, abs(fp.p))
    assert abs(end.H - fp.base.H) < 1e-8 * max(1, abs(fp.base.H))


# real initial data over real bases that run into a pole (found with the pole-scan job);
# the sign of p picks the sheet
PIII3_POLE = (BasePoint("PIII3", 1.0, 0.5), 1.351391088977806, 1, [1.0, 4.0])
PII_POLE = (BasePoint("PII", 0.0, 0.5), -1.067521161841099, -1, [0.0, 4.0])


def _pole_traj(case):
    base, q, sign, span = case
    p = sign * np.sqrt(complex(base.q0(q)))
    fp = FiberPoint(base, q, p)
    return integrate_flow(flow_field(base.family, "w1"), fp, span)


def test_pole_fit_piii3():
    traj = _pole_traj(PIII3_POLE)
    fit = pole_fit(traj)
    assert fit.order == 2
    assert abs(fit.leading - fit.t0) < 1e-8 * abs(fit.t0)
    assert fit.residual < 1e-8
    assert abs(fit.H0 + 3 * fit.subleading["q0"] * fit.t0 - 0.25) < 1e-6


def test_pole_fit_piii3_scales_with_epsilon():
    # q(t) at epsilon solves the epsilon = 1 flow with t rescaled, so leading = t0 eps^2
    base, q, sign, _ = PIII3_POLE
    eps = -1.0
    p = sign * np.sqrt(complex(base.q0(q)))
    fp = FiberPoint(base, q, p, epsilon=eps)
    fit = pole_fit(integrate_flow(flow_field("PIII3", "w1", eps), fp, [1.0, 4.0]))
    assert abs(fit.leading - fit.t0 * eps ** 2) < 1e-8 * abs(fit.t0)


def test_pole_fit_piii3_frozen():
    fit = pole_fit(_pole_traj(PIII3_POLE))
    assert abs(fit.t0 - 2.0105725896828592) < 1e-8


def test_pole_fit_pii():
    fit = pole_fit(_pole_traj(PII_POLE))
    assert fit.order == 1
    assert abs(abs(fit.leading) - 1) < 1e-10
    assert abs(fit.t0 - 0.8713400689226726) < 1e-8
    assert fit.residual < 1e-8


def test_pi_has_no_pole_chart():
    fp, _ = _fiber("PI", 2)
    traj = integrate_flow(flow_field("PI", "w1"), fp, [fp.base.t + 0.2])
    with pytest.raises(NoPoleInSpan):
        pole_fit(traj)


def test_csv_columns(tmp_path):
    fp, _ = _fiber("PII", 4)
    traj = integrate_flow(flow_field("PII", "w1"), fp, [fp.base.t + 0.3])
    path = tmp_path / "flow.csv"
    traj.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == Trajectory.CSV_COLUMNS
    assert len(rows) == len(traj) + 1
    assert complex(float(rows[-1][6]), float(rows[-1][7])) == traj.states[-1][3]
