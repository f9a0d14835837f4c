"""Invariant suite run by the ``check`` subcommand.

Each invariant draws its own seeded sample points, so a record depends only
on the family, the seed and the invariant, never on evaluation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .elliptic import elliptic_data, weierstrass_eval
from .families import PAIRING, FamilyId, FiberPoint
from .isomonodromy import (apparent_singularity_residual_fp, oper_closed_form, oper_potential,
                           parameter_square_defect, zero_curvature_residual)
from .joyce import (euler_rescale, heavenly_residual, involution_piii, joyce_connection,
                    k_third_derivatives, k_third_derivatives_fd, plebanski_w,
                    prepotential_s, theta_inverse, theta_map)
from .sampling import random_base, random_fiber
from .spectral import bilinear_pairing, cycle_basis
from .tau import exterior_derivative_defect, omega_forms, tau_trajectory

ALL = (FamilyId.PI, FamilyId.PII, FamilyId.PIII3)
JOYCE = (FamilyId.PII, FamilyId.PIII3)


@dataclass(frozen=True)
class Invariant:
    """A numerical identity checked at random points.

    ``evaluate(family, rng, n)`` returns the worst value over ``n`` points;
    the check passes when that value is below ``tolerance`` (or above it
    when ``at_least`` is set).
    """
    name: str
    anchor: str
    families: tuple
    tolerance: float
    evaluate: Callable
    at_least: bool = False

    def passed(self, value: float) -> bool:
        if not math.isfinite(value):
            return False
        return value >= self.tolerance if self.at_least else value < self.tolerance


def _fiber(family, rng, joyce=False, **kw) -> FiberPoint:
    return random_fiber(random_base(family, rng, joyce=joyce), rng, **kw)


def _bilinear(method):
    def run(family, rng, n):
        worst = 0.0
        for _ in range(n):
            base = random_base(family, rng, joyce=True)
            val = bilinear_pairing("omega", "beta_t_or_s", cycle_basis(base), base, method)
            worst = max(worst, abs(val - 2j * math.pi * PAIRING[family]))
        return worst
    return run


def _weierstrass(family, rng, n):
    worst = 0.0
    for _ in range(n):
        g2, g3 = (complex(*rng.uniform(-10, 10, 2)) for _ in range(2))
        ed = elliptic_data(g2, g3)
        u = complex(*rng.uniform(-1, 1, 2))
        wp, dwp, _ = weierstrass_eval(u, ed)
        res = abs(dwp ** 2 - (4 * wp ** 3 - g2 * wp - g3)) / max(1.0, abs(wp) ** 3)
        worst = max(worst, res, abs(ed.legendre_defect()))
    return worst


def _oper(family, rng, n):
    worst = 0.0
    for _ in range(n):
        eps = complex(*rng.uniform(0.5, 1.5, 2))
        fp = _fiber(family, rng, epsilon=eps, s_radius=0.5)
        x = fp.q + complex(*rng.uniform(0.3, 1.0, 2))
        a, b = oper_potential(fp, x), oper_closed_form(fp, x)
        worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    return worst


def _apparent(family, rng, n):
    worst = 0.0
    for _ in range(n):
        fp = _fiber(family, rng, s_radius=0.5)
        worst = max(worst, *(abs(v) for v in apparent_singularity_residual_fp(fp)))
    return worst


def _zero_curvature(family, rng, n):
    worst = 0.0
    for _ in range(n):
        fp = _fiber(family, rng)
        x = fp.q + complex(*rng.uniform(0.3, 1.0, 2))
        worst = max(worst, zero_curvature_residual(fp, x))
    return worst


def _commutator_slope(family, rng, n):
    worst = np.inf
    for _ in range(n):
        fp = _fiber(family, rng)
        d1, d2 = parameter_square_defect(fp, 1e-2), parameter_square_defect(fp, 1e-3)
        worst = min(worst, math.log10(d1 / d2))
    return worst


def _theta_backends(family, rng, n):
    worst = 0.0
    for _ in range(n):
        fp = _fiber(family, rng)
        a, b = theta_map(fp, "uniformization"), theta_map(fp, "periods")
        worst = max(worst, a.distance(b))
    return worst


def _theta_round_trip(family, rng, n):
    worst = 0.0
    for _ in range(n):
        fp = _fiber(family, rng)
        back = theta_inverse(fp.base, theta_map(fp))
        worst = max(worst, abs(back.q - fp.q) / max(1.0, abs(fp.q)), abs(back.r - fp.r),
                    abs(back.p - fp.p) / max(1.0, abs(fp.p)))
    return worst


def _homogeneity(family, rng, n):
    worst = 0.0
    for _ in range(n):
        fp = _fiber(family, rng, joyce=True)
        phi = rng.uniform(0, 2 * math.pi)
        w = plebanski_w(fp)
        scaled = plebanski_w(euler_rescale(fp, 1j * phi))
        worst = max(worst, abs(scaled - np.exp(-1j * phi) * w) / max(1.0, abs(w)))
    return worst


def _k_derivatives(family, rng, n):
    worst = 0.0
    for _ in range(n):
        fp = _fiber(family, rng, joyce=True)
        fd, _ = k_third_derivatives_fd(fp)
        exact = k_third_derivatives(fp)
        for key, val in fd.items():
            ref = exact[key]
            worst = max(worst, abs(val - ref) / (abs(ref) if abs(ref) > 1e-12 else 1.0))
    return worst


def _heavenly(family, rng, n):
    return max(abs(heavenly_residual(_fiber(family, rng, joyce=True))) for _ in range(n))


def _prepotential(family, rng, n):
    worst = 0.0
    for _ in range(n):
        pre = prepotential_s(random_base(family, rng, joyce=True))
        worst = max(worst, float(np.max(np.abs(np.asarray(pre.gradient)
                                               - np.asarray(pre.fd_gradient)))))
    return worst


def _connection(family, rng, n):
    return max(joyce_connection(random_base(family, rng, joyce=True)).flat_residual
               for _ in range(n))


def _involution(family, rng, n):
    worst = 0.0
    for _ in range(n):
        fp = _fiber(family, rng)
        img = involution_piii(fp)
        worst = max(worst, abs(plebanski_w(img) - plebanski_w(fp)),
                    theta_map(img).distance(theta_map(fp)))
    return worst


def _forms_closed(family, rng, n):
    worst = 0.0
    for _ in range(n):
        fp = _fiber(family, rng, joyce=True)
        worst = max(worst, exterior_derivative_defect(lambda x: omega_forms(x, "I"), fp))
    return worst


def _tau_hamiltonian(family, rng, n):
    worst = 0.0
    h = 1e-4
    for _ in range(n):
        base = random_base(family, rng, joyce=True).with_(t=complex(rng.uniform(0.8, 1.5)))
        fp = random_fiber(base, rng, r_radius=0)
        t0 = base.t
        traj = tau_trajectory(fp, [t0 + 0.3 - h, t0 + 0.3, t0 + 0.3 + h])
        i = int(np.argmin(np.abs(traj.params - (t0 + 0.3))))
        fd = (traj.log_tau[i + 1] - traj.log_tau[i - 1]) / (2 * h)
        y = traj.states[i]
        if family is FamilyId.PIII3:
            ham, scale = (y[4] * y[3] + y[5]) ** 2 - y[0] * y[3] - 1 / y[3], 1 / y[0]
        else:
            ham, scale = ((y[4] + y[5]) ** 2 - y[3] ** 4 - y[0] * y[3] ** 2) / 2, 1
        worst = max(worst, abs(fd - ham * scale) / max(1.0, abs(ham * scale)))
    return worst


SUITE = (
    Invariant("bilinear_relation_elliptic", "Riemann bilinear relation <omega, beta> "
              "(elliptic backend)", ALL, 1e-9, _bilinear("elliptic")),
    Invariant("bilinear_relation_quadrature", "Riemann bilinear relation <omega, beta> "
              "(contour quadrature)", ALL, 1e-9, _bilinear("quadrature")),
    Invariant("weierstrass_layer", "Weierstrass differential equation and Legendre relation",
              (FamilyId.PI,), 1e-9, _weierstrass),
    Invariant("oper_equivalence", "gauge equivalence of the pencil and the oper potential",
              ALL, 1e-8, _oper),
    Invariant("apparent_singularity", "apparent-singularity conditions at x = q", ALL, 1e-8,
              _apparent),
    Invariant("zero_curvature", "zero-curvature equation of the w1 flow", JOYCE, 1e-6,
              _zero_curvature),
    Invariant("flow_commutativity_slope", "commuting isomonodromic flows (square-defect "
              "log-slope)", JOYCE, 2.7, _commutator_slope, at_least=True),
    Invariant("theta_backend_agreement", "Abel map and period integrals give the same "
              "theta coordinates", ALL, 1e-7, _theta_backends),
    Invariant("theta_round_trip", "theta coordinates invert to the fiber point", ALL, 1e-7,
              _theta_round_trip),
    Invariant("plebanski_homogeneity", "Plebanski function has Euler weight -1", ALL, 1e-10,
              _homogeneity),
    Invariant("k_third_derivatives", "third derivatives of K from the flows match the "
              "closed forms", JOYCE, 1e-6, _k_derivatives),
    Invariant("heavenly_equation", "Plebanski second heavenly equation", ALL, 1e-5, _heavenly),
    Invariant("prepotential_gradient", "dW/dtheta at theta = 0 is the gradient of the "
              "prepotential", ALL, 1e-5, _prepotential),
    Invariant("joyce_connection_flat", "linear Joyce connection vanishes in flat "
              "coordinates", JOYCE, 1e-6, _connection),
    Invariant("involution_invariance", "covering involution preserves W and theta",
              (FamilyId.PIII3,), 1e-7, _involution),
    Invariant("omega_i_closed", "2i Omega_I is closed", JOYCE, 1e-5, _forms_closed),
    Invariant("tau_hamiltonian", "d log tau along the flow equals the Hamiltonian", JOYCE,
              1e-6, _tau_hamiltonian),
)


def run_suite(family, seed: int, n: int = 3, names=None) -> list[dict]:
    """Evaluate every invariant that applies to ``family``; one record per invariant."""
    family = FamilyId.parse(family)
    records = []
    for index, inv in enumerate(SUITE):
        if family not in inv.families or (names and inv.name not in names):
            continue
        rng = np.random.default_rng([seed, index, list(FamilyId).index(family)])
        try:
            value = float(inv.evaluate(family, rng, n))
            error = None
        except Exception as exc:  # a failing identity is reported, not raised
            value, error = math.nan, f"{type(exc).__name__}: {exc}"
        rec = {"name": inv.name, "family": family.value, "anchor": inv.anchor,
               "value": value, "tolerance": inv.tolerance,
               "comparison": ">=" if inv.at_least else "<", "passed": inv.passed(value)}
        if error:
            rec["error"] = error
        records.append(rec)
    return records
