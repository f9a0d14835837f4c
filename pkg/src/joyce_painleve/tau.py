"""Holomorphic 2-forms, symplectic potentials and the tau function on the r = 0 locus.

Log tau is accumulated alongside the isomonodromic w1 flow.  Its rate is
the Painleve Hamiltonian recovered from the state; inside a pole chart the
integrand is regularized by subtracting the logarithmic derivative of a
chart variable with a simple zero, so samples stay finite up to the pole.
"""
from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import FamilyMismatch, NoPoleInSpan, OffLagrangian, SheetSingular
from .families import FamilyId, FiberPoint
from .isomonodromy import (CHART_POLE, CHART_POLE_INVOLUTED, CHART_REGULAR, FIT_ATOL, FIT_TOL,
                           FlowControls, FlowField, Trajectory, _project_pole_chart,
                           integrate_flow, pole_chart_field, pole_fit)
from .joyce import ETA, CanonicalChart
from .numerics import Tolerances, fd_derivative, ode_integrate

UNEVALUATED = "unevaluated"
_LAGRANGIAN_TOL = 1e-12


# ---------------------------------------------------------------------------
# forms

@dataclass(frozen=True)
class TwoForm:
    """``(1/2) sum_ij matrix[i, j] dx_i ^ dx_j`` in the named chart."""
    chart: tuple
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (len(self.chart), len(self.chart)):
            raise ValueError("matrix shape does not match the chart")
        if np.max(np.abs(m + m.T), initial=0.0) > 0:
            raise ValueError("two-form matrix must be antisymmetric")
        object.__setattr__(self, "matrix", m)

    def component(self, a: str, b: str) -> complex:
        """Coefficient of ``dx_a ^ dx_b``."""
        return complex(self.matrix[self.chart.index(a), self.chart.index(b)])

    @classmethod
    def from_terms(cls, chart: Sequence[str], terms: dict) -> "TwoForm":
        """Build from ``{(a, b): c}`` meaning ``c dx_a ^ dx_b``."""
        m = np.zeros((len(chart), len(chart)), dtype=complex)
        for (a, b), c in terms.items():
            i, j = chart.index(a), chart.index(b)
            m[i, j] += c
            m[j, i] -= c
        return cls(tuple(chart), m)


@dataclass(frozen=True)
class OneForm:
    """``sum_i coeffs[i] dx_i`` in the named chart."""
    chart: tuple
    coeffs: np.ndarray

    def component(self, a: str) -> complex:
        return complex(self.coeffs[self.chart.index(a)])

    def __call__(self, tangent) -> complex:
        return complex(np.dot(self.coeffs, np.asarray(tangent, dtype=complex)))


def base_chart(family: FamilyId) -> tuple:
    """Coordinates ``(first, H, q, r)`` used for closed-form 2-forms."""
    return ("s" if family is FamilyId.PIII3 else "t", "H", "q", "r")


def potential_chart(family: FamilyId) -> tuple:
    """Coordinates ``(first, H, q, p, r)`` used for the displayed potentials."""
    return ("s" if family is FamilyId.PIII3 else "t", "H", "q", "p", "r")


CANONICAL_CHART = ("z1", "z2", "theta1", "theta2")


def fiber_chart(family: FamilyId) -> tuple:
    """Coordinates ``(first, q, p, r)``, with ``H`` eliminated through ``p**2 = Q0(q)``."""
    return ("s" if family is FamilyId.PIII3 else "t", "q", "p", "r")


def _fiber_jacobian(fp: FiberPoint) -> np.ndarray:
    """Jacobian of ``(first, H, q, r)`` with respect to ``(first, q, p, r)``."""
    t, q, p = fp.t, fp.q, fp.p
    if fp.family is FamilyId.PIII3:
        # H = q^2 p^2 - t q - 1/q with t = exp(s)
        dh = (-t * q, 2 * q * p * p - t + 1 / (q * q), 2 * q * q * p)
    else:
        # H = (p^2 - q^4 - t q^2 + 2 alpha q) / 2
        dh = (-q * q / 2, -2 * q ** 3 - t * q + fp.alpha, p)
    jac = np.zeros((4, 4), dtype=complex)
    jac[0, 0] = jac[2, 1] = jac[3, 3] = 1
    jac[1, :3] = dh
    return jac


def to_fiber_chart(form, fp: FiberPoint):
    """Pull a form from the chart ``(first, H, q, r)`` back to ``(first, q, p, r)``."""
    jac = _fiber_jacobian(fp)
    chart = fiber_chart(fp.family)
    if isinstance(form, TwoForm):
        m = jac.T @ form.matrix @ jac
        return TwoForm(chart, (m - m.T) / 2)
    return OneForm(chart, form.coeffs @ jac)


def _require_joyce_family(fp: FiberPoint) -> None:
    if fp.family is FamilyId.PI:
        raise FamilyMismatch("the forms are implemented for PIII3 and PII")
    if fp.family is FamilyId.PII and (fp.alpha != 0 or fp.s != 0):
        raise FamilyMismatch("the PII Joyce structure is taken at alpha = s = 0")


def _two_i_omega_i(fp: FiberPoint) -> TwoForm:
    t, q, p, r = fp.t, fp.q, fp.p, fp.r
    if p == 0:
        raise SheetSingular("p = 0")
    chart = base_chart(fp.family)
    if fp.family is FamilyId.PIII3:
        terms = {("s", "H"): r / (q * p),
                 ("s", "r"): 2 * q * p,
                 ("H", "q"): 1 / (2 * q * q * p),
                 ("s", "q"): (2 * r * (t * q * q - 1) + t * q * q) / (2 * p * q ** 3)}
    else:
        terms = {("t", "H"): r / p,
                 ("t", "r"): p,
                 ("H", "q"): 1 / p,
                 ("t", "q"): r / p * (2 * q ** 3 + t * q) + q * q / (2 * p)}
    return TwoForm.from_terms(chart, terms)


def _canonical_forms(fp: FiberPoint, which: str) -> TwoForm:
    eta = ETA[fp.family]
    w12 = -1 / eta
    if which == "0":
        return TwoForm.from_terms(CANONICAL_CHART, {("z1", "z2"): w12})
    if which == "I":
        return TwoForm.from_terms(CANONICAL_CHART, {("theta1", "z2"): -w12,
                                                    ("theta2", "z1"): w12})
    chart = CanonicalChart(fp)
    eye = np.eye(4)
    inv = np.linalg.inv(chart.M0)
    z_dir = [inv[0, b] * eye[0] + inv[1, b] * eye[1] for b in range(2)]
    terms = {("theta1", "theta2"): w12}
    for a in range(2):
        for b in range(2):
            w_tt = chart.derivative([eye[2 + a], eye[2 + b]])
            terms[(f"theta{a + 1}", f"z{b + 1}")] = terms.get((f"theta{a + 1}", f"z{b + 1}"), 0) + w_tt
            if a != b:
                w_zt = chart.derivative([z_dir[a], eye[2 + b]])
                terms[(f"z{a + 1}", f"z{b + 1}")] = terms.get((f"z{a + 1}", f"z{b + 1}"), 0) + w_zt
    return TwoForm.from_terms(CANONICAL_CHART, terms)


def omega_forms(fp: FiberPoint, which: str, chart: str = "base") -> TwoForm:
    """Holomorphic 2-forms of the hyperkahler structure.

    Parameters
    ----------
    fp : FiberPoint
        PIII3, or PII with ``alpha = s = 0``.
    which : {"0", "I", "infinity"}
        ``"I"`` returns ``2i Omega_I``.
    chart : {"base", "fiber", "canonical"}
        ``(first, H, q, r)`` closed forms, their pull-back to
        ``(first, q, p, r)``, or ``(z1, z2, theta1, theta2)``;
        ``"infinity"`` exists only in the canonical chart, where its
        Plebanski-function entries come from finite differences.
    """
    _require_joyce_family(fp)
    if which not in ("0", "I", "infinity"):
        raise ValueError(f"unknown form {which!r}")
    if chart == "canonical":
        return _canonical_forms(fp, which)
    if chart == "fiber":
        return to_fiber_chart(omega_forms(fp, which, "base"), fp)
    if chart != "base":
        raise ValueError(f"unknown chart {chart!r}")
    if which == "0":
        names = base_chart(fp.family)
        return TwoForm.from_terms(names, {(names[0], "H"): 1})
    if which == "I":
        return _two_i_omega_i(fp)
    raise ValueError("Omega_infinity is only available in the canonical chart")


def euler_field(fp: FiberPoint, chart: Sequence[str]) -> np.ndarray:
    """Euler vector field components in a chart drawn from ``(first, H, q, p, r)``."""
    t, H, q, p, r = fp.t, fp.H, fp.q, fp.p, fp.r
    if fp.family is FamilyId.PIII3:
        comp = {"s": 4, "H": 2 * H, "q": -2 * q, "p": 3 * p, "r": 0}
    elif fp.family is FamilyId.PII:
        comp = {"t": 2 * t / 3, "H": 4 * H / 3, "q": q / 3, "p": 2 * p / 3, "r": -r / 3}
    else:
        raise FamilyMismatch("Euler field is implemented for PIII3 and PII")
    return np.array([comp[c] for c in chart], dtype=complex)


def contract(vector: np.ndarray, form: TwoForm) -> OneForm:
    """Interior product ``i_V form``."""
    return OneForm(form.chart, np.asarray(vector, dtype=complex) @ form.matrix)


def liouville_form(fp: FiberPoint, chart: Sequence[str]) -> OneForm:
    """``H d(first)``, the Liouville form of the cotangent structure over the time line."""
    coeffs = np.zeros(len(chart), dtype=complex)
    coeffs[0] = fp.H
    return OneForm(tuple(chart), coeffs)


def theta_potentials(fp: FiberPoint) -> tuple[OneForm, OneForm]:
    """``(Theta_0, 2i Theta_I)`` on the ``r = 0`` locus in the chart ``(first, H, q, p, r)``.

    Raises
    ------
    OffLagrangian
        If ``r != 0``.
    """
    _require_joyce_family(fp)
    if abs(fp.r) > _LAGRANGIAN_TOL:
        raise OffLagrangian("potentials are taken on the r = 0 locus")
    t, H, q, p = fp.t, fp.H, fp.q, fp.p
    chart = potential_chart(fp.family)
    if fp.family is FamilyId.PIII3:
        theta0 = [-H, 4, 0, 0, 0]
        theta_i = [0, 0, 3 * p, 2 * q, 8 * q * p]
    else:
        theta0 = [-H / 3, 2 * t / 3, 0, 0, 0]
        theta_i = [0, 0, 2 * p / 3, -q / 3, 2 * p * t / 3]
    return OneForm(chart, np.array(theta0, dtype=complex)), OneForm(chart, np.array(theta_i,
                                                                                  dtype=complex))


def theta_i_potential(fp: FiberPoint) -> OneForm:
    """``i_E(2i Omega_I)`` in the chart ``(first, H, q, r)`` at any ``r``."""
    form = _two_i_omega_i(fp)
    return contract(euler_field(fp, form.chart), form)


# ---------------------------------------------------------------------------
# finite-difference exterior derivatives in the base chart

def fiber_at(reference: FiberPoint, coords) -> FiberPoint:
    """Fiber point at ``(first, H, q, r)`` with ``p`` continued from ``reference``."""
    first, H, q, r = (complex(c) for c in coords)
    t = cmath.exp(first) if reference.family is FamilyId.PIII3 else first
    base = reference.base.with_(t=t, H=H)
    p = cmath.sqrt(base.q0(q))
    if abs(p - reference.p) > abs(p + reference.p):
        p = -p
    return FiberPoint(base, q, p, r, reference.s, reference.epsilon)


def chart_coordinates(fp: FiberPoint) -> np.ndarray:
    first = fp.base.s if fp.family is FamilyId.PIII3 else fp.t
    return np.array([first, fp.H, fp.q, fp.r], dtype=complex)


def exterior_derivative_one(form_fn: Callable[[FiberPoint], OneForm], fp: FiberPoint,
                            tol: Tolerances = Tolerances(fd_step=1e-4)) -> TwoForm:
    """``d`` of a 1-form field in the chart ``(first, H, q, r)`` by central differences."""
    x0 = chart_coordinates(fp)
    eye = np.eye(4)
    chart = form_fn(fp).chart
    grads = np.zeros((4, 4), dtype=complex)
    for i in range(4):
        for k in range(4):
            grads[k, i] = fd_derivative(lambda x: form_fn(fiber_at(fp, x)).coeffs[i], x0,
                                        [eye[k]], tol=tol).value
    return TwoForm(chart, grads - grads.T)


def exterior_derivative_defect(form_fn: Callable[[FiberPoint], TwoForm], fp: FiberPoint,
                               tol: Tolerances = Tolerances(fd_step=1e-4)) -> float:
    """Largest component of ``d`` of a 2-form field, by central differences."""
    x0 = chart_coordinates(fp)
    eye = np.eye(4)
    d = np.zeros((4, 4, 4), dtype=complex)
    for k in range(4):
        for i in range(4):
            for j in range(i + 1, 4):
                val = fd_derivative(lambda x: form_fn(fiber_at(fp, x)).matrix[i, j], x0,
                                    [eye[k]], tol=tol).value
                d[k, i, j], d[k, j, i] = val, -val
    worst = 0.0
    for a in range(4):
        for b in range(a + 1, 4):
            for c in range(b + 1, 4):
                worst = max(worst, abs(d[a, b, c] + d[b, c, a] + d[c, a, b]))
    return worst


# ---------------------------------------------------------------------------
# d log tau on the Lagrangian

@dataclass(frozen=True)
class DLogTau:
    """Exact part of ``d log tau`` on a tangent vector plus the Fock-Goncharov term marker."""
    value: complex
    fock_goncharov: str = UNEVALUATED


def dlogtau_form(fp: FiberPoint) -> OneForm:
    """The exact-part 1-form ``-H d(first) + p dq + d(exact)`` in the chart ``(t, H, q, p, r)``.

    The first coordinate is written through ``dt`` (``ds = dt/t`` for PIII3)
    so the form acts directly on state tangents.
    """
    _require_joyce_family(fp)
    if abs(fp.r) > _LAGRANGIAN_TOL:
        raise OffLagrangian("d log tau is evaluated on the r = 0 locus")
    t, H, q, p = fp.t, fp.H, fp.q, fp.p
    if fp.family is FamilyId.PIII3:
        # -H ds + p dq + d(4H + 2qp)
        coeffs = [-H / t, 4, 3 * p, 2 * q, 0]
    else:
        # -H dt + p dq + (1/3) d(2tH - qp)
        coeffs = [-H + 2 * H / 3, 2 * t / 3, p - p / 3, -q / 3, 0]
    return OneForm(("t", "H", "q", "p", "r"), np.array(coeffs, dtype=complex))


def dlogtau(fp: FiberPoint, tangent) -> DLogTau:
    """Evaluate ``d log tau`` on a state tangent ``(t, H, alpha, q, p, r, s)``.

    The Fock-Goncharov term is constant along the isomonodromic flows and
    is returned only as the marker :data:`UNEVALUATED`.
    """
    v = np.asarray(tangent, dtype=complex)
    form = dlogtau_form(fp)
    return DLogTau(form(v[[0, 1, 3, 4, 5]]))


# ---------------------------------------------------------------------------
# tau along the flow

def hamiltonian(family: FamilyId, state) -> complex:
    """Painleve Hamiltonian of the r = 0 flow through the state's q and dq/d(time)."""
    t, H, a, q, p, r, s = state
    if family is FamilyId.PIII3:
        return (p * q + r) ** 2 - t * q - 1 / q
    if family is FamilyId.PII:
        return ((p + r) ** 2 - q ** 4 - t * q * q + 2 * a * q) / 2
    raise FamilyMismatch("tau is implemented for PIII3 and PII")


def _chart_hamiltonian(family: FamilyId, chart: int, y) -> complex:
    """Hamiltonian from pole-chart variables without cancellation."""
    t, H, a, u, P, k, s = y
    if family is FamilyId.PIII3:
        regular = H + 2 * k * (t + H * u + u * u) + (P * k - 0.5) ** 2
        if chart == CHART_POLE_INVOLUTED:
            return regular + P * k - 0.25
        return regular - P / u
    return H - P / (2 * u) + k * P + (k * u * u - u / 2) ** 2 / 2


class _TauQuadrature:
    """Rates of log tau per chart for :func:`integrate_flow`."""

    def __init__(self, family: FamilyId):
        self.family = family

    def order(self, chart: int) -> float:
        if chart == CHART_REGULAR or chart == CHART_POLE_INVOLUTED:
            return 0
        return 1 if self.family is FamilyId.PIII3 else 0.5

    def zero_variable(self, chart: int, y) -> complex:
        return y[4] if self.family is FamilyId.PIII3 else y[3]

    def rate(self, chart: int, y) -> complex:
        fam = self.family
        if chart == CHART_REGULAR:
            h = hamiltonian(fam, y)
            return h / y[0] if fam is FamilyId.PIII3 else h
        t, H, a, u, P, k, s = y
        if fam is FamilyId.PIII3:
            base = (H + 2 * k * (t + H * u + u * u) + (P * k - 0.5) ** 2) / t
            if chart == CHART_POLE_INVOLUTED:
                return base + (P * k - 0.25) / t
            g = 1 / (t + H * u + u * u)
            r = -0.5 + P * k
            G = 0.5 * g * (1 - 2 * r - 2 * r * (2 * H * u + 3 * u * u) / t) \
                - P * g * (2 * H + 3 * u) / t
            return base - (H + u) * P * g / t - G
        return H + k * P + (k * u * u - u / 2) ** 2 / 2 + (k * u ** 3 - u * u / 2) / 2


@dataclass(frozen=True)
class TauSample:
    """Log tau at a time ``t``; ``H`` is the Painleve Hamiltonian there.

    ``d log_tau / dt = H`` for PII and ``d log_tau / ds = H`` (``s = log t``)
    for PIII3.  ``chart`` is the integration chart of the sample.
    """
    t: complex
    H: complex
    log_tau: complex
    chart: int


def _check_tau_start(start: FiberPoint, lagrangian: bool) -> None:
    if start.family is FamilyId.PI:
        raise FamilyMismatch("tau is implemented for PIII3 and PII")
    if start.epsilon != 1:
        raise ValueError("tau is integrated at epsilon = 1")
    if start.s != 0 or (lagrangian and abs(start.r) > _LAGRANGIAN_TOL):
        raise OffLagrangian("tau starts on the r = 0, s = 0 locus")


def tau_trajectory(start: FiberPoint, span: Sequence[complex],
                   controls: FlowControls = FlowControls(),
                   lagrangian: bool = True) -> Trajectory:
    """Isomonodromic w1 trajectory carrying ``log_tau`` (normalized to 0 at the start).

    Along the isomonodromic flow ``q(t)`` coincides with the ``r = 0``
    Painleve flow from the same start; the Hamiltonian of the latter is
    recovered as ``(pq + r)**2 - tq - 1/q`` (PIII3) or
    ``((p + r)**2 - q**4 - t q**2 + 2 alpha q)/2`` (PII).  Set
    ``lagrangian=False`` to continue from a later point of such a
    trajectory, where ``r`` no longer vanishes.
    """
    _check_tau_start(start, lagrangian)
    ff = FlowField(start.family, "w1", 1)
    return integrate_flow(ff, start, span, controls, quadrature=_TauQuadrature(start.family))


def tau_samples(traj: Trajectory) -> list[TauSample]:
    if traj.log_tau is None:
        raise ValueError("trajectory carries no log tau")
    out = []
    for tau, cy, chart, lt in zip(traj.params, traj.chart_states, traj.charts, traj.log_tau):
        h = hamiltonian(traj.family, cy) if chart == CHART_REGULAR else \
            _chart_hamiltonian(traj.family, chart, cy)
        out.append(TauSample(complex(tau), complex(h), complex(lt), int(chart)))
    return out


def tau_along_flow(start: FiberPoint, span: Sequence[complex],
                   controls: FlowControls = FlowControls()) -> list[TauSample]:
    """Samples of log tau along the standard Painleve flow from ``start``."""
    return tau_samples(tau_trajectory(start, span, controls))


TAU_CSV_COLUMNS = ("t_re", "t_im", "log_tau_re", "log_tau_im", "H_re", "H_im", "chart")


def write_tau_csv(samples: Sequence[TauSample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TAU_CSV_COLUMNS)
        for smp in samples:
            w.writerow([repr(float(x)) for x in (smp.t.real, smp.t.imag, smp.log_tau.real,
                                                 smp.log_tau.imag, smp.H.real, smp.H.imag)]
                       + [smp.chart])


def tau_records(samples: Sequence[TauSample]) -> list[dict]:
    return [{"t": [s.t.real, s.t.imag], "log_tau": [s.log_tau.real, s.log_tau.imag],
             "H": [s.H.real, s.H.imag], "chart": s.chart} for s in samples]


# ---------------------------------------------------------------------------
# tau zeros versus Painleve poles

@dataclass(frozen=True)
class TauZeroMatch:
    """A zero of tau located by contour integrals of ``d log tau / dt`` next to a fitted pole."""
    zero: complex
    pole: complex
    gap: float
    order: float


def _advance_chart(family: FamilyId, y0, t_from: complex, t_to: complex) -> np.ndarray:
    if t_from == t_to:
        return np.array(y0, dtype=complex)
    return ode_integrate(lambda tau, y: pole_chart_field(family, 1, y), y0, [t_from, t_to],
                         FIT_TOL, record_steps=False, atol=FIT_ATOL,
                         project=lambda tau, y: _project_pole_chart(family, y)).final


def _dlogtau_dt(family: FamilyId, y) -> complex:
    h = _chart_hamiltonian(family, CHART_POLE, y)
    return h / y[0] if family is FamilyId.PIII3 else h


def tau_zero_near(traj: Trajectory, center: complex, radius: float = 2e-2,
                  nodes: int = 48) -> tuple[complex, float]:
    """Zero of tau inside a circle and its vanishing order.

    The order is ``(1/2 pi i) oint dlog tau`` and the location
    ``oint t dlog tau / oint dlog tau``, by the trapezoid rule on the circle;
    the pole chart is integrated from the nearest pole-chart sample.
    """
    fam = traj.family
    idx = [i for i in range(len(traj)) if traj.charts[i] == CHART_POLE]
    if not idx:
        raise NoPoleInSpan("trajectory never entered the pole chart")
    i0 = min(idx, key=lambda i: abs(traj.params[i] - center))
    y, prev = traj.chart_states[i0], complex(traj.params[i0])
    pts = center + radius * np.exp(2j * math.pi * np.arange(nodes) / nodes)
    vals = []
    for z in pts:
        y = _advance_chart(fam, y, prev, z)
        prev = z
        vals.append(_dlogtau_dt(fam, y))
    # trapezoid rule: oint f dt = 2 pi i * mean(f (t - center))
    weights = np.array(vals) * (pts - center)
    m0 = np.mean(weights)
    m1 = np.mean(weights * pts)
    return complex(m1 / m0), float(m0.real)


def tau_zero_pole_match(traj: Trajectory) -> list[TauZeroMatch]:
    """Pair each fitted pole of q with the zero of tau found next to it.

    For PIII3 only poles of q (chart 1) are considered; zeros of q are
    regular points of tau.
    """
    if traj.log_tau is None:
        raise ValueError("trajectory carries no log tau")
    runs = []
    prev = CHART_REGULAR
    for c in traj.charts:
        if c != CHART_REGULAR and c != prev:
            runs.append(int(c))
        prev = c
    if CHART_POLE not in runs:
        raise NoPoleInSpan("no pole of q along the trajectory")
    out = []
    for which, chart in enumerate(runs):
        if chart != CHART_POLE:
            continue
        fit = pole_fit(traj, which=which)
        zero, order = tau_zero_near(traj, fit.t0)
        out.append(TauZeroMatch(zero, fit.t0, abs(zero - fit.t0), order))
    return out
