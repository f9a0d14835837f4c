"""The twelve acceptance criteria, one PASS/FAIL line each (shown in the terminal summary)."""
import cmath
import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from joyce_painleve.elliptic import elliptic_data, weierstrass_eval
from joyce_painleve.errors import JoyceError
from joyce_painleve.families import PAIRING, BasePoint, FamilyId, FiberPoint
from joyce_painleve.isomonodromy import (apparent_singularity_residual_fp, flow_field,
                                         integrate_flow, oper_closed_form, oper_potential,
                                         parameter_square_defect, pole_fit,
                                         zero_curvature_residual)
from joyce_painleve.joyce import (euler_rescale, heavenly_residual, involution_piii,
                                  joyce_connection, k_third_derivatives, k_third_derivatives_fd,
                                  plebanski_w, prepotential_s, theta_map)
from joyce_painleve.numerics import fd_derivative
from joyce_painleve.sampling import random_base, random_fiber
from joyce_painleve.spectral import bilinear_pairing, cycle_basis
from joyce_painleve.tau import hamiltonian, tau_trajectory, tau_zero_pole_match

FAMILIES = ("PI", "PII", "PIII3")
JOYCE = ("PII", "PIII3")


def _report(number, passed, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert passed, detail


def _rng(number, family=""):
    return np.random.default_rng([number, sum(map(ord, family))])


def _fiber(family, rng, joyce=False, **kw):
    return random_fiber(random_base(family, rng, joyce=joyce), rng, **kw)


def test_criterion_01_bilinear_constants():
    worst = {}
    for fam in ("PIII3", "PII"):
        rng = _rng(1, fam)
        target = 2j * math.pi * PAIRING[FamilyId.parse(fam)]
        for _ in range(20):
            base = random_base(fam, rng, joyce=True)
            cycles = cycle_basis(base)
            for method in ("quadrature", "elliptic"):
                val = bilinear_pairing("omega", "beta_t_or_s", cycles, base, method)
                key = (fam, method)
                worst[key] = max(worst.get(key, 0.0), abs(val - target))
    detail = ", ".join(f"{f}/{m} {v:.1e}" for (f, m), v in worst.items())
    _report(1, max(worst.values()) < 1e-9, f"bilinear residuals (20 bases) {detail} < 1e-9")


def test_criterion_02_weierstrass_layer():
    rng = _rng(2)
    ode = legendre = 0.0
    for _ in range(50):
        while True:
            g2, g3 = (complex(*rng.uniform(-10, 10, 2)) for _ in range(2))
            if abs(g2) <= 10 and abs(g3) <= 10 and abs(g2 ** 3 - 27 * g3 ** 2) > 1e-6:
                break
        ed = elliptic_data(g2, g3)
        u = complex(*rng.uniform(-1, 1, 2))
        wp, dwp, _ = weierstrass_eval(u, ed)
        ode = max(ode, abs(dwp ** 2 - (4 * wp ** 3 - g2 * wp - g3)) / max(1.0, abs(wp) ** 3))
        rel = ed.eta_1 * ed.half_period_2 - ed.eta_2 * ed.half_period_1
        legendre = max(legendre, abs(rel - 1j * math.pi / 2))
    _report(2, ode < 1e-9 and legendre < 1e-10,
            f"ODE residual {ode:.1e} < 1e-9, Legendre defect {legendre:.1e} < 1e-10 (50 invariants)")


def test_criterion_03_oper_equivalence():
    oper = apparent = 0.0
    for fam in FAMILIES:
        rng = _rng(3, fam)
        for _ in range(20):
            eps = complex(*rng.uniform(0.5, 1.5, 2))
            fp = _fiber(fam, rng, epsilon=eps, s_radius=0.5)
            x = fp.q + complex(*rng.uniform(0.3, 1.0, 2))
            a, b = oper_potential(fp, x), oper_closed_form(fp, x)
            oper = max(oper, abs(a - b) / max(1.0, abs(b)))
            apparent = max(apparent, *(abs(v) for v in apparent_singularity_residual_fp(fp)))
    _report(3, oper < 1e-8 and apparent < 1e-8,
            f"oper mismatch {oper:.1e} < 1e-8, apparent-singularity residual {apparent:.1e} "
            "(rounding level)")


def test_criterion_04_zero_curvature():
    worst = {}
    for fam in JOYCE:
        rng = _rng(4, fam)
        for _ in range(20):
            fp = _fiber(fam, rng)
            x = fp.q + complex(*rng.uniform(0.3, 1.0, 2))
            worst[fam] = max(worst.get(fam, 0.0), zero_curvature_residual(fp, x))
    _report(4, max(worst.values()) < 1e-7,
            "zero-curvature residual " + ", ".join(f"{f} {v:.1e}" for f, v in worst.items())
            + " < 1e-7")


def test_criterion_05_flow_commutativity():
    slopes = {}
    for fam in JOYCE:
        rng = _rng(5, fam)
        vals = []
        for _ in range(5):
            fp = _fiber(fam, rng)
            d1, d2 = parameter_square_defect(fp, 1e-2), parameter_square_defect(fp, 1e-3)
            vals.append(math.log10(d1 / d2))
        slopes[fam] = min(vals)
    _report(5, min(slopes.values()) >= 2.7,
            "square-defect log-slope " + ", ".join(f"{f} {v:.2f}" for f, v in slopes.items())
            + " >= 2.7")


def test_criterion_06_k_derivatives():
    worst = {}
    for fam in JOYCE:
        rng = _rng(6, fam)
        for _ in range(20):
            fp = _fiber(fam, rng, joyce=True)
            fd, _ = k_third_derivatives_fd(fp)
            exact = k_third_derivatives(fp)
            for key, val in fd.items():
                ref = exact[key]
                err = abs(val - ref) / (abs(ref) if abs(ref) > 1e-12 else 1.0)
                worst[fam] = max(worst.get(fam, 0.0), err)
    _report(6, max(worst.values()) < 1e-6,
            "K third derivatives vs FD " + ", ".join(f"{f} {v:.1e}" for f, v in worst.items())
            + " < 1e-6 (20 points each)")


def test_criterion_07_heavenly_equation():
    worst = {}
    for fam in FAMILIES:
        rng = _rng(7, fam)
        for _ in range(10):
            fp = _fiber(fam, rng, joyce=True)
            worst[fam] = max(worst.get(fam, 0.0), abs(heavenly_residual(fp)))
    _report(7, max(worst.values()) < 1e-5,
            "heavenly residual " + ", ".join(f"{f} {v:.1e}" for f, v in worst.items())
            + " < 1e-5 (10 points each)")


def test_criterion_08_theta_backends_and_involution():
    backend = 0.0
    for fam in FAMILIES:
        rng = _rng(8, fam)
        for _ in range(20):
            fp = _fiber(fam, rng)
            backend = max(backend, theta_map(fp, "uniformization").distance(
                theta_map(fp, "periods")))
    inv_theta = inv_w = 0.0
    rng = _rng(8, "involution")
    for _ in range(20):
        fp = _fiber("PIII3", rng)
        img = involution_piii(fp)
        inv_theta = max(inv_theta, theta_map(img).distance(theta_map(fp)))
        inv_w = max(inv_w, abs(plebanski_w(img) - plebanski_w(fp)))
    _report(8, backend < 1e-7 and inv_theta < 1e-7 and inv_w < 1e-10,
            f"theta backends {backend:.1e} < 1e-7; PIII3 involution theta {inv_theta:.1e} < 1e-7, "
            f"W {inv_w:.1e} < 1e-10")


def _s_gradient_oracle(base):
    """FD gradient in (first, H) of the prepotential formulas stated in the criterion."""
    if base.family is FamilyId.PIII3:
        def s(x):
            return -cmath.log(x[1] ** 2 - 4 * cmath.exp(x[0])) / 24
        x0 = np.array([base.s, base.H])
    else:
        def s(x):
            return -cmath.log(x[1] ** 2 * (8 * x[1] - x[0] ** 2)) / 48
        x0 = np.array([base.t, base.H])
    return [fd_derivative(s, x0, [e]).value for e in np.eye(2)]


def test_criterion_09_zero_section():
    grad = 0.0
    for fam in JOYCE:
        rng = _rng(9, fam)
        for _ in range(5):
            base = random_base(fam, rng, joyce=True)
            pre = prepotential_s(base)
            grad = max(grad, float(np.max(np.abs(np.subtract(pre.fd_gradient,
                                                             _s_gradient_oracle(base))))))
    flat = kttt = 0.0
    for fam in JOYCE:
        rng = _rng(9, fam + "connection")
        for _ in range(3):
            con = joyce_connection(random_base(fam, rng, joyce=True))
            flat = max(flat, con.flat_residual)
            if fam == "PII":
                kttt = max(kttt, abs(con.third[("t", "t", "t")] + 0.25))
    _report(9, grad < 1e-5 and flat < 1e-6 and kttt < 1e-6,
            f"dW/dtheta at 0 vs grad S {grad:.1e} < 1e-5; connection in flat coordinates "
            f"{flat:.1e} < 1e-6; PII K_ttt + 1/4 = {kttt:.1e}")


def _pole_fits(family, eps):
    base = BasePoint(family, 1.0 if family == "PIII3" else 0.0, 0.5)
    span = [base.t, 4.0]
    fits, rejected = [], 0
    for q in np.linspace(-1.5, 1.5, 9):
        if (family == "PIII3" and abs(q) < 0.3) or min(abs(np.roots(base.branch_polynomial())
                                                           - q)) < 0.15:
            continue
        for sign in (1, -1):
            fp = FiberPoint(base, complex(q), sign * cmath.sqrt(base.q0(q)), 0, 0, eps)
            traj = integrate_flow(flow_field(family, "w1", eps), fp, span)
            runs = sum(1 for i, c in enumerate(traj.charts)
                       if c != 0 and (i == 0 or traj.charts[i - 1] != c))
            for which in range(runs):
                try:
                    fit = pole_fit(traj, which)
                except JoyceError:
                    rejected += 1
                    continue
                if fit.chart == 1:
                    branch = _branch_sign(traj, fit) if family == "PII" else 1
                    fits.append((fit, branch))
    return fits, rejected


def _branch_sign(traj, fit):
    # sign of p / q^2 at the pole: the PII chart stores it directly
    i = min((i for i in range(len(traj)) if traj.charts[i] == 1),
            key=lambda i: abs(traj.params[i] - fit.t0))
    return 1 if traj.chart_states[i][4].real > 0 else -1


def test_criterion_10_pole_analysis():
    lead3 = h0 = lead2 = 0.0
    count = {"PIII3": 0, "PII": 0}
    rejected = 0
    for eps in (0.8, 1.0, 1.3):
        fits3, rej3 = _pole_fits("PIII3", eps)
        fits2, rej2 = _pole_fits("PII", eps)
        rejected += rej3 + rej2
        for fit, _ in fits3:
            count["PIII3"] += 1
            target = fit.t0 * eps ** 2
            lead3 = max(lead3, abs(fit.leading - target) / abs(target))
            h0 = max(h0, abs(fit.H0 - (-3 * fit.subleading["q0"] * fit.t0 + eps ** 2 / 4)))
        for fit, branch in fits2:
            count["PII"] += 1
            lead2 = max(lead2, abs(fit.leading + branch * eps) / abs(eps))
    ok = lead3 < 1e-3 and h0 < 1e-4 and lead2 < 1e-3 and min(count.values()) >= 5 and not rejected
    _report(10, ok, f"PIII3 leading t0 eps^2 rel {lead3:.1e} < 1e-3, H0 + 3 q0 t0 - eps^2/4 "
            f"{h0:.1e} < 1e-4 ({count['PIII3']} poles); PII leading -eps on the chosen branch "
            f"rel {lead2:.1e} < 1e-3 ({count['PII']} poles); {rejected} fits rejected")


# tau: pole-producing Lagrangian data (see the isomonodromy tests)
TAU_CASES = {"PIII3": (BasePoint("PIII3", 1.0, 0.5), 1.351391088977806, 1, [1.0, 4.0]),
             "PII": (BasePoint("PII", 0.0, 0.5), -1.067521161841099, -1, [0.0, 4.0])}


def _tau_traj(fam):
    base, q, sign, span = TAU_CASES[fam]
    return tau_trajectory(FiberPoint(base, q, sign * cmath.sqrt(base.q0(q))), span)


def _tau_fd_worst():
    worst = 0.0
    for fam in JOYCE:
        rng = _rng(11, fam)
        for _ in range(5):
            base = random_base(fam, rng, joyce=True).with_(t=complex(rng.uniform(0.8, 1.5)))
            fp = random_fiber(base, rng, r_radius=0)
            h, tm = 1e-4, base.t + 0.3
            traj = tau_trajectory(fp, [tm - h, tm, tm + h])
            i = int(np.argmin(np.abs(traj.params - tm)))
            fd = (traj.log_tau[i + 1] - traj.log_tau[i - 1]) / (2 * h)
            ham = hamiltonian(fp.family, traj.states[i]) / (tm if fam == "PIII3" else 1)
            worst = max(worst, abs(fd - ham) / max(1.0, abs(ham)))
    return worst


def test_criterion_11_parts_that_hold():
    assert _tau_fd_worst() < 1e-6
    for m in tau_zero_pole_match(_tau_traj("PIII3")):
        assert m.gap < 1e-5 and abs(m.order - 1) < 1e-6
    for m in tau_zero_pole_match(_tau_traj("PII")):
        assert m.gap < 1e-5 and abs(m.order - 0.5) < 1e-6


@pytest.mark.xfail(strict=True, reason="PII: d log tau/dt = H has residue 1/2 at each pole, so "
                                       "tau vanishes to order 1/2; see the decision ledger")
def test_criterion_11_tau():
    fd = _tau_fd_worst()
    parts = []
    ok = fd < 1e-6
    for fam in JOYCE:
        matches = tau_zero_pole_match(_tau_traj(fam))
        gap = max(m.gap for m in matches)
        orders = sorted({round(m.order, 6) for m in matches})
        simple = all(abs(m.order - 1) < 1e-6 for m in matches)
        ok &= gap < 1e-5 and simple
        parts.append(f"{fam} zero-pole gap {gap:.1e}, order {orders}"
                     + ("" if simple else " (not simple)"))
    _report(11, ok, f"FD of log tau vs H {fd:.1e} < 1e-6; " + "; ".join(parts))


def test_criterion_12_homogeneity():
    worst = 0.0
    for fam in FAMILIES:
        rng = _rng(12, fam)
        for _ in range(20):
            fp = _fiber(fam, rng, joyce=True)
            phi = rng.uniform(0, 2 * math.pi)
            w = plebanski_w(fp)
            scaled = plebanski_w(euler_rescale(fp, 1j * phi))
            worst = max(worst, abs(scaled - cmath.exp(-1j * phi) * w) / max(1.0, abs(w)))
    _report(12, worst < 1e-10, f"W weight -1 under Euler scaling, defect {worst:.1e} < 1e-10")
