"""Connection pencils, their oper form and the extended isomonodromic flows.

A fiber point is carried through flows as the state vector
``(t, H, alpha, q, p, r, s)``; ``p`` is kept on its sheet by Newton
projection onto ``p**2 = Q0(q)`` after every accepted step.
"""
from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (Blowup, FitRejected, GaugeSingular, NoPoleInSpan, PoleHit,
                     SheetSingular)
from .families import BasePoint, FamilyId, FiberPoint
from .numerics import DEFAULT_TOL, Tolerances, fd_derivative, ode_integrate
from .spectral import q1_value, q2_value

STATE_NAMES = ("t", "H", "alpha", "q", "p", "r", "s")
CHART_REGULAR, CHART_POLE, CHART_POLE_INVOLUTED = 0, 1, 2


# ---------------------------------------------------------------------------
# matrices

def _pencil_entries(family: FamilyId, t, H, alpha, q, p, r, s, eps, x, higgs_only=False):
    """Entries (a11, a12, a21) of the pencil (or Higgs field) and x-derivatives of a11, a12.

    Returns ``(a11, a12, a21, da11, da12, dda12)``; the matrix is traceless.
    """
    if higgs_only:
        eps, r, s = 1.0, 0.0, -0.5
    if family is FamilyId.PIII3:
        if x == 0:
            raise PoleHit("x = 0 is a pole of the PIII3 connection")
        c = r + p * q / eps
        a11 = c / x
        a12 = (1 / x - q / x ** 2) / eps
        a21 = (t - 1 / (q * x)) / eps
        return a11, a12, a21, -c / x ** 2, (-1 / x ** 2 + 2 * q / x ** 3) / eps, \
            (2 / x ** 3 - 6 * q / x ** 4) / eps
    if family is FamilyId.PII:
        m = t - 2 * p + 2 * q * q
        a11 = r + (x * x + p - q * q) / eps
        a12 = (x - q) / eps
        a21 = -2 * s - 1 - 2 * r * (x + q) + (x * m - 2 * alpha + q * m) / eps
        return a11, a12, a21, 2 * x / eps, 1 / eps, 0.0
    a11 = r + p / eps
    a12 = (x - q) / eps
    a21 = (x * x + x * q + q * q + t) / eps
    return a11, a12, a21, 0.0, 1 / eps, 0.0


def _matrix(a11, a12, a21) -> np.ndarray:
    return np.array([[a11, a12], [a21, -a11]], dtype=complex)


def _unpack(fp: FiberPoint):
    return fp.family, fp.t, fp.H, fp.alpha, fp.q, fp.p, fp.r, fp.s, fp.epsilon


def higgs_matrix(fp: FiberPoint, x: complex) -> np.ndarray:
    """The Higgs field (coefficient of dx) at ``x``; ``-det`` equals Q0(x)."""
    fam, t, H, a, q, p, r, s, eps = _unpack(fp)
    a11, a12, a21, *_ = _pencil_entries(fam, t, H, a, q, p, r, s, eps, complex(x), True)
    return _matrix(a11, a12, a21)


def pencil_matrix(fp: FiberPoint, x: complex) -> np.ndarray:
    """``A_eps(x) = A_inf(x) + Phi(x)/eps`` including the reference connection."""
    fam, t, H, a, q, p, r, s, eps = _unpack(fp)
    a11, a12, a21, *_ = _pencil_entries(fam, t, H, a, q, p, r, s, eps, complex(x))
    return _matrix(a11, a12, a21)


def deformation_matrix(fp: FiberPoint, x: complex) -> np.ndarray:
    """``B_eps(x)`` of the t-flow, so that d/dt Y = B Y is compatible with d/dx Y = A Y."""
    fam, t, H, a, q, p, r, s, eps = _unpack(fp)
    x = complex(x)
    if fam is FamilyId.PIII3:
        c = p * q + eps * r
        return np.array([[c / (eps * t), 1 / (eps * t)], [x / eps, -c / (eps * t)]])
    if fam is FamilyId.PII:
        return np.array([[(q + x) / (2 * eps), 1 / (2 * eps)],
                         [-r + (-2 * p + 2 * q * q + t) / (2 * eps), -(q + x) / (2 * eps)]])
    return np.array([[0, 1 / eps], [(x + 2 * q) / eps, 0]], dtype=complex)


def _dx_deformation(fp: FiberPoint) -> np.ndarray:
    fam, eps = fp.family, fp.epsilon
    if fam is FamilyId.PIII3:
        return np.array([[0, 0], [1 / eps, 0]], dtype=complex)
    if fam is FamilyId.PII:
        return np.array([[1 / (2 * eps), 0], [0, -1 / (2 * eps)]], dtype=complex)
    return np.array([[0, 0], [1 / eps, 0]], dtype=complex)


# ---------------------------------------------------------------------------
# oper form

def _oper_from_entries(a11, a12, a21, da11, da12, dda12) -> complex:
    if abs(a12) < 1e-14:
        raise GaugeSingular("A_12 vanishes; the gauge transformation is singular here")
    ratio = da12 / a12
    det = -a11 * a11 - a12 * a21
    return -det + da11 - a11 * ratio + 0.75 * ratio * ratio - dda12 / (2 * a12)


def oper_potential(fp: FiberPoint, x: complex) -> complex:
    """Potential of the scalar equation y'' = Q y gauge-equivalent to the pencil."""
    fam, t, H, a, q, p, r, s, eps = _unpack(fp)
    return _oper_from_entries(*_pencil_entries(fam, t, H, a, q, p, r, s, eps, complex(x)))


def oper_closed_form(fp: FiberPoint, x: complex) -> complex:
    """``Q0/eps^2 + Q1/eps + Q2`` from the family's closed forms."""
    eps = fp.epsilon
    return fp.base.q0(x) / eps ** 2 + q1_value(fp, x) / eps + q2_value(fp, x)


def _laurent_constant(f: Callable[[complex], complex], center: complex, radius: float,
                      n: int = 64) -> tuple[complex, complex]:
    """Constant term and coefficient of 1/(x - center) by circle averaging."""
    angles = np.exp(2j * math.pi * np.arange(n) / n)
    vals = np.array([f(center + radius * w) for w in angles])
    return complex(vals.mean()), complex((vals * radius * angles).mean())


def apparent_singularity_residual(base: BasePoint, q: complex, p: complex, r: complex = 0j,
                                  s: complex = 0j, epsilon: complex = 1 + 0j
                                  ) -> tuple[complex, complex]:
    """Apparent-singularity defects at x = q extracted from the gauge potential.

    The eps-coefficients Q0, Q1, Q2 of the gauge potential are separated by
    evaluating it at three values of eps.  Around ``x = q`` the Laurent data
    ``Q1 = -p_q/(x-q) + u + ...`` and ``Q2 = 3/(4(x-q)^2) - r_q/(x-q) + v + ...``
    are read off by circle averages.  Returns
    ``(u - 2 p_q r_q - (p_q**2 - Q0(q))/eps, v - r_q**2)``; the first entry
    carries the eps^-2 part of the condition so off-sheet ``p`` is detected.
    """
    fam = base.family
    t, H, a = base.t, base.H, base.alpha
    q, p, r, s, epsilon = (complex(v) for v in (q, p, r, s, epsilon))
    others = [0j] if fam is FamilyId.PIII3 else []
    radius = 0.25 * min([abs(q - o) for o in others] + [1.0])
    epss = np.array([1.0, 2.0, 3.0], dtype=complex)
    inv = np.linalg.inv(np.vstack([epss ** -2, epss ** -1, np.ones(3)]).T)

    def coeff(k):
        def g(x):
            vals = [_oper_from_entries(*_pencil_entries(fam, t, H, a, q, p, r, s, e, x))
                    for e in epss]
            return (inv @ np.array(vals))[k]
        return g

    u, res1 = _laurent_constant(coeff(1), q, radius)
    v, res2 = _laurent_constant(coeff(2), q, radius)
    p_q, r_q = -res1, -res2
    return (u - 2 * p_q * r_q - (p_q * p_q - base.q0(q)) / epsilon, v - r_q * r_q)


def apparent_singularity_residual_fp(fp: FiberPoint) -> tuple[complex, complex]:
    return apparent_singularity_residual(fp.base, fp.q, fp.p, fp.r, fp.s, fp.epsilon)


# ---------------------------------------------------------------------------
# flows

FLOW_IDS = ("w1", "w2", "w3")
FLOW_PARAMETER = {"w1": 0, "w2": 1, "w3": 2}   # index of t, H, alpha in the state


def _q0_partials(family: FamilyId, t, H, alpha, q):
    """(dQ0/dt, dQ0/dH, dQ0/dalpha, dQ0/dx) at x = q."""
    if family is FamilyId.PIII3:
        return 1 / q, 1 / q ** 2, 0j, -t / q ** 2 - 2 * H / q ** 3 - 3 / q ** 4
    if family is FamilyId.PII:
        return q * q, 2.0, -2 * q, 4 * q ** 3 + 2 * t * q - 2 * alpha
    return q, 1.0, 0j, 3 * q * q + t


def _q0(family: FamilyId, t, H, alpha, x):
    if family is FamilyId.PIII3:
        return t / x + H / x ** 2 + 1 / x ** 3
    if family is FamilyId.PII:
        return x ** 4 + t * x ** 2 - 2 * alpha * x + 2 * H
    return x ** 3 + t * x + H


@dataclass(frozen=True)
class FlowField:
    """An extended isomonodromic vector field at fixed ``epsilon``.

    ``normalization`` is "isomonodromic" (H and alpha conserved along w1) or
    "hamiltonian" (w1 shifted by a multiple of w2 so that H evolves by the
    usual Painleve Hamiltonian; PII and PIII3 only).
    """
    family: FamilyId
    flow_id: str
    epsilon: complex = 1 + 0j
    normalization: str = "isomonodromic"

    def __post_init__(self):
        object.__setattr__(self, "family", FamilyId.parse(self.family))
        object.__setattr__(self, "epsilon", complex(self.epsilon))
        if self.flow_id not in FLOW_IDS:
            raise ValueError(f"unknown flow {self.flow_id!r}")
        if self.flow_id == "w3" and self.family is not FamilyId.PII:
            raise ValueError("w3 exists only for PII")
        if self.normalization not in ("isomonodromic", "hamiltonian"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "hamiltonian" and self.family is FamilyId.PI:
            raise ValueError("PI w1 is already in Hamiltonian form")

    @property
    def parameter_index(self) -> int:
        return FLOW_PARAMETER[self.flow_id]

    def components(self, state) -> np.ndarray:
        """Components on ``(t, H, alpha, q, p, r, s)``; the p-entry follows from the constraint."""
        t, H, a, q, p, r, s = state
        eps = self.epsilon
        fam = self.family
        if p == 0:
            raise SheetSingular("p = 0: the fiber point sits on a branch point")
        v = np.zeros(7, dtype=complex)
        if fam is FamilyId.PIII3:
            if self.flow_id == "w1":
                v[0] = t
                v[3] = 2 * p * q * q / eps + 2 * q * r
                v[5] = -(2 * r * q * q * t - 2 * r + q * q * t) / (2 * eps * p * q * q)
                if self.normalization == "hamiltonian":
                    v[1] = -q * t
                    v[5] += q * t / (2 * eps * p * q)
            else:
                v[1] = 1
                v[5] = -1 / (2 * eps * p * q)
        elif fam is FamilyId.PII:
            if self.flow_id == "w1":
                v[0] = 1
                v[3] = r + p / eps
                v[5] = -(s + q * q / (2 * p) + r / p * (2 * q ** 3 + t * q - a)) / eps
                if self.normalization == "hamiltonian":
                    v[1] = -q * q / 2
                    v[5] += q * q / (2 * eps * p)
            elif self.flow_id == "w2":
                v[1] = 1
                v[5] = -1 / (eps * p)
            else:
                v[2] = 1
                v[6] = -1 / eps
                v[5] = q / (eps * p)
        else:
            if self.flow_id == "w1":
                v[0] = 1
                v[1] = -q
                v[3] = 2 * p / eps + 2 * r
                v[5] = -(3 * q * q + t) * r / (eps * p)
            else:
                v[1] = 1
                v[5] = -1 / (2 * p * eps)
        dt, dH, da, dx = _q0_partials(fam, t, H, a, q)
        v[4] = (dt * v[0] + dH * v[1] + da * v[2] + dx * v[3]) / (2 * p)
        return v

    def __call__(self, fp: FiberPoint) -> dict:
        """Components at a fiber point keyed by coordinate name."""
        return dict(zip(STATE_NAMES, self.components(state_of(fp))))


def flow_field(family, flow_id: str, epsilon: complex = 1 + 0j,
               normalization: str = "isomonodromic") -> FlowField:
    return FlowField(FamilyId.parse(family), flow_id, epsilon, normalization)


def state_of(fp: FiberPoint) -> np.ndarray:
    return np.array([fp.t, fp.H, fp.alpha, fp.q, fp.p, fp.r, fp.s], dtype=complex)


def project_p(family: FamilyId, state) -> np.ndarray:
    """Newton-project p onto p**2 = Q0(q), seeded by the current p."""
    y = np.array(state, dtype=complex)
    t, H, a, q, p = y[:5]
    target = _q0(family, t, H, a, q)
    for _ in range(3):
        if p == 0:
            break
        p = p - (p * p - target) / (2 * p)
    y[4] = p
    return y


def fiber_from_state(family: FamilyId, state, epsilon: complex) -> FiberPoint:
    t, H, a, q, p, r, s = project_p(family, state)
    base = BasePoint(family, t, H, a if family is FamilyId.PII else 0)
    return FiberPoint(base, q, p, r, s if family is FamilyId.PII else 0, epsilon)


def displaced(fp: FiberPoint, direction, h: complex) -> FiberPoint:
    """Fiber point at ``state + h * direction`` with p continued from ``fp.p``."""
    y = state_of(fp) + h * np.asarray(direction, dtype=complex)
    t, H, a, q = y[:4]
    p = cmath.sqrt(_q0(fp.family, t, H, a, q))
    y[4] = p if abs(p - fp.p) <= abs(p + fp.p) else -p
    return fiber_from_state(fp.family, y, fp.epsilon)


def zero_curvature_residual(fp: FiberPoint, x: complex, flow_id: str = "w1",
                            tol: Tolerances = DEFAULT_TOL) -> float:
    """Max-norm of d_t A - d_x B + [A, B] with d_t A by finite differences along the flow.

    For w2 and w3 the deformation matrix is zero and the residual is the
    derivative of A along the flow itself.
    """
    ff = flow_field(fp.family, flow_id, fp.epsilon)
    v = ff.components(state_of(fp))
    speed = v[ff.parameter_index]
    v = v.copy()
    v[4] = 0  # p is recomputed from the constraint by ``displaced``

    def entry(i, j):
        return lambda h: pencil_matrix(displaced(fp, v, h), x)[i, j]

    dA = np.array([[fd_derivative(entry(i, j), 0j, [1.0], tol=tol).value for j in range(2)]
                   for i in range(2)]) / speed
    if flow_id != "w1":
        return float(np.max(np.abs(dA)))
    A = pencil_matrix(fp, x)
    B = deformation_matrix(fp, x)
    return float(np.max(np.abs(dA - _dx_deformation(fp) + A @ B - B @ A)))


# ---------------------------------------------------------------------------
# pole charts
#
# PIII3, chart 1: u = 1/q, p, k = (r + 1/2)/p; chart 2 is chart 1 composed with
# the involution (q, p, r) -> (1/(q t), -t p q^2, -(r + 1/2)), which maps w1 to
# itself.  PII, chart 1: u = 1/q, P = p/q^2, k = (r/u + 1/2 + s P)/u.  In these
# variables the w1 equations (H, alpha, s fixed) are regular through the pole.

def involution(state) -> np.ndarray:
    """PIII3 involution on a state vector (t, H, 0, q, p, r, 0)."""
    t, H, a, q, p, r, s = state
    return np.array([t, H, a, 1 / (q * t), -t * p * q * q, -(r + 0.5), s], dtype=complex)


def _to_pole_chart(family: FamilyId, state) -> np.ndarray:
    t, H, a, q, p, r, s = state
    u = 1 / q
    if family is FamilyId.PIII3:
        return np.array([t, H, a, u, p, (r + 0.5) / p, s], dtype=complex)
    P = p * u * u
    return np.array([t, H, a, u, P, (r / u + 0.5 + s * P) / u, s], dtype=complex)


def _from_pole_chart(family: FamilyId, y) -> np.ndarray:
    t, H, a, u, P, k, s = y
    if family is FamilyId.PIII3:
        return np.array([t, H, a, 1 / u, P, -0.5 + P * k, s], dtype=complex)
    return np.array([t, H, a, 1 / u, P / (u * u), u * (-0.5 - s * P + k * u), s], dtype=complex)


def _to_chart(family: FamilyId, chart: int, state) -> np.ndarray:
    if chart == CHART_REGULAR:
        return np.array(state, dtype=complex)
    if chart == CHART_POLE_INVOLUTED:
        state = involution(state)
    return _to_pole_chart(family, state)


def _from_chart(family: FamilyId, chart: int, y) -> np.ndarray:
    if chart == CHART_REGULAR:
        return np.array(y, dtype=complex)
    state = _from_pole_chart(family, y)
    return involution(state) if chart == CHART_POLE_INVOLUTED else state


def pole_chart_field(family: FamilyId, eps: complex, y) -> np.ndarray:
    """d/dt of the pole-chart state along the isomonodromic w1 flow."""
    t, H, a, u, P, k, s = y
    out = np.zeros(7, dtype=complex)
    out[0] = 1
    if family is FamilyId.PIII3:
        p = P
        g = 1 / (t + H * u + u * u)
        r = -0.5 + p * k
        G = 0.5 * g * (1 - 2 * r - 2 * r * (2 * H * u + 3 * u * u) / t) \
            - p * g * (2 * H + 3 * u) / (eps * t)
        out[3] = -(2 * p / eps + 2 * r * u) / t
        out[4] = -1 / eps + p * G
        out[5] = r * u * g / (eps * t) - k * G
        return out
    if P == 0:
        raise SheetSingular("degenerate pole chart")
    out[3] = P * s * u ** 3 - P / eps - k * u ** 4 + u ** 3 / 2
    out[4] = u * (eps * u + (-2 * P + eps * u ** 3 * (2 * P * s - 2 * k * u + 1))
                  * (4 * H * u * u - 3 * a * u + t)) / (2 * P * eps)
    poly = (-40 * H * eps * k * s * u ** 6 - 4 * P * s * t
            + u ** 5 * (24 * H * P * eps * s * s + 16 * H * eps * s + 36 * a * eps * k * s)
            + u ** 4 * (-20 * P * a * eps * s * s - 14 * a * eps * s - 16 * eps * k * s * t)
            + u ** 3 * (16 * H * k + 8 * P * eps * k * k + 8 * P * eps * s * s * t + 6 * eps * s * t)
            + u ** 2 * (-24 * H * P * s - 4 * H - 6 * P * eps * k - 12 * a * k - 12 * eps * k * s)
            + u * (16 * P * a * s + 4 * P * eps * s * s + P * eps + 2 * a + 6 * eps * s + 4 * k * t))
    out[5] = poly / (4 * P * eps)
    return out


def _project_pole_chart(family: FamilyId, y) -> np.ndarray:
    y = np.array(y, dtype=complex)
    t, H, a, u, P = y[:5]
    if family is FamilyId.PIII3:
        target = u * (t + H * u + u * u)
    else:
        target = 1 + t * u * u - 2 * a * u ** 3 + 2 * H * u ** 4
    for _ in range(3):
        if P == 0:
            break
        P = P - (P * P - target) / (2 * P)
    y[4] = P
    return y


@dataclass(frozen=True)
class FlowControls:
    """Integration controls for :func:`integrate_flow`.

    ``enter_pole`` and ``leave_pole`` are the |q| thresholds (|1/(q t)| for
    the involuted PIII3 chart) at which the pole chart is entered and left;
    ``None`` picks the family default.
    """
    tol: Tolerances = DEFAULT_TOL
    enter_pole: float | None = None
    leave_pole: float | None = None
    max_switches: int = 64
    max_steps: int = 200000
    ceiling: float = 1e12


POLE_THRESHOLDS = {FamilyId.PIII3: (1e4, 1e2), FamilyId.PII: (1e2, 1e1)}


@dataclass
class Trajectory:
    """Samples of a fiber point along a flow.

    ``states`` rows are ``(t, H, alpha, q, p, r, s)`` in regular coordinates
    (``q`` may be huge inside a pole chart); ``charts`` flags the chart used
    for each sample (0 regular, 1 pole, 2 involuted pole); ``chart_states``
    holds the chart variables actually integrated.
    """
    family: FamilyId
    flow_id: str
    epsilon: complex
    params: np.ndarray
    states: np.ndarray
    charts: np.ndarray
    chart_states: np.ndarray
    switches: list = field(default_factory=list)
    log_tau: np.ndarray | None = None
    normalization: str = "isomonodromic"

    CSV_COLUMNS = ("param_re", "param_im", "t_re", "t_im", "H_re", "H_im", "q_re", "q_im",
                   "p_re", "p_im", "r_re", "r_im", "s_re", "s_im", "chart")

    def __len__(self) -> int:
        return len(self.params)

    def fiber(self, i: int) -> FiberPoint:
        return fiber_from_state(self.family, self.states[i], self.epsilon)

    @property
    def final(self) -> FiberPoint:
        return self.fiber(-1)

    def to_csv(self, path) -> None:
        """Write the samples with the column order of ``CSV_COLUMNS``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS + (("log_tau_re", "log_tau_im")
                                           if self.log_tau is not None else ()))
            for i in range(len(self)):
                t, H, a, q, p, r, s = self.states[i]
                row = [self.params[i].real, self.params[i].imag]
                for z in (t, H, q, p, r, s):
                    row += [repr(float(z.real)), repr(float(z.imag))]
                row.append(int(self.charts[i]))
                if self.log_tau is not None:
                    row += [repr(float(self.log_tau[i].real)), repr(float(self.log_tau[i].imag))]
                w.writerow(row)


def _regular_rhs(ff: FlowField):
    idx = ff.parameter_index

    def rhs(tau, y):
        v = ff.components(y)
        return v / v[idx]
    return rhs


def _segment_index(verts: Sequence[complex], tau: complex, start: int) -> int:
    for i in range(start, len(verts) - 1):
        a, b = verts[i], verts[i + 1]
        d = b - a
        sfrac = ((tau - a) * d.conjugate()).real / abs(d) ** 2
        if -1e-9 <= sfrac <= 1 + 1e-9 and abs(a + sfrac * d - tau) <= 1e-9 * (1 + abs(d)):
            return i
    return len(verts) - 2


def integrate_flow(ff: FlowField, start: FiberPoint, span: Sequence[complex],
                   controls: FlowControls = FlowControls(), quadrature=None) -> Trajectory:
    """Integrate a flow from ``start`` along a path in its parameter.

    ``span`` lists the parameter vertices to visit (t for w1, H for w2,
    alpha for w3); the start value is prepended when absent.  Along w1
    (isomonodromic normalization) poles of q are crossed in a pole chart.

    ``quadrature`` optionally accumulates a logarithmic integral alongside
    the flow (stored in ``Trajectory.log_tau``).  It provides
    ``rate(chart, y)``, the derivative of the regularized integral in the
    given chart, ``order(chart)`` and ``zero_variable(chart, y)``: inside a
    chart the integral equals the regularized value plus
    ``order * log(zero_variable)``, with the logarithm continued along the
    samples.
    """
    fam = ff.family
    if start.epsilon != ff.epsilon:
        raise ValueError("the fiber point and the flow use different epsilon")
    idx = ff.parameter_index
    y = state_of(start)
    verts = [complex(v) for v in span]
    if abs(verts[0] - y[idx]) > 1e-14 * (1 + abs(y[idx])):
        verts = [complex(y[idx])] + verts
    if idx == 0 and fam is FamilyId.PIII3 and any(abs(v) < 1e-12 for v in verts):
        raise ValueError("PIII3 flow parameter must avoid t = 0")
    charts_ok = ff.flow_id == "w1" and ff.normalization == "isomonodromic" and \
        fam in POLE_THRESHOLDS
    enter, leave = POLE_THRESHOLDS.get(fam, (np.inf, np.inf))
    enter = controls.enter_pole or enter
    leave = controls.leave_pole or leave
    tol = controls.tol

    def magnitude(chart, cy):
        """|q| in the coordinate the chart resolves."""
        if chart == CHART_REGULAR:
            q = cy[3]
            big = abs(q)
            if fam is FamilyId.PIII3:
                big = max(big, abs(1 / (q * cy[0])))
            return big
        return abs(1 / cy[3]) if cy[3] != 0 else np.inf

    params, states, charts, cstates, switches = [verts[0]], [y.copy()], [0], [y.copy()], []
    chart = CHART_REGULAR
    seg = 0
    current = y.copy()
    path = list(verts)
    quad = quadrature
    log_tau = [0j] if quad is not None else None
    level = 0j            # regularized integral at the start of the current chart run
    log_zero = 0j         # continued log of the zero variable at the last sample

    def augmented(field_fn, c):
        if quad is None:
            return field_fn

        def rhs_aug(tau, z):
            return np.append(field_fn(tau, z[:7]), quad.rate(c, z[:7]))
        return rhs_aug

    def project_aug(proj_fn):
        if quad is None:
            return proj_fn
        return lambda tau, z: np.append(proj_fn(tau, z[:7]), z[7])

    while True:
        if chart == CHART_REGULAR:
            rhs = _regular_rhs(ff)
            proj = lambda tau, z: project_p(fam, z)
            stop = (lambda tau, z: magnitude(CHART_REGULAR, z[:7]) > enter) if charts_ok else None
        else:
            rhs = lambda tau, z: pole_chart_field(fam, ff.epsilon, z)
            proj = lambda tau, z: _project_pole_chart(fam, z)
            stop = lambda tau, z, c=chart: magnitude(c, z[:7]) < leave
        start_vec = current if quad is None else np.append(current, level)
        try:
            sol = ode_integrate(augmented(rhs, chart), start_vec, path, tol,
                                ceiling=controls.ceiling, max_steps=controls.max_steps, stop=stop,
                                project=project_aug(proj))
        except Blowup as exc:
            if chart == CHART_REGULAR and charts_ok:
                raise Blowup(f"regular chart failed before reaching the pole threshold: {exc}",
                             exc.param, exc.state) from exc
            raise
        order = quad.order(chart) if quad is not None else 0
        for tau, cy in zip(sol.params[1:], sol.states[1:]):
            params.append(tau)
            cstates.append(cy[:7].copy())
            states.append(_from_chart(fam, chart, cy[:7]))
            charts.append(chart)
            if quad is not None:
                if order:
                    lz = cmath.log(quad.zero_variable(chart, cy[:7]))
                    log_zero = lz + 2j * math.pi * round((log_zero - lz).imag / (2 * math.pi))
                log_tau.append(cy[7] + order * log_zero)
        if "stopped" not in sol.notes:
            break
        tau = sol.params[-1]
        if len(switches) >= controls.max_switches:
            raise Blowup("too many chart switches", tau, sol.states[-1])
        regular = _from_chart(fam, chart, sol.states[-1][:7])
        if chart == CHART_REGULAR:
            new = CHART_POLE
            if fam is FamilyId.PIII3 and abs(regular[3]) < 1:
                new = CHART_POLE_INVOLUTED
        else:
            new = CHART_REGULAR
        switches.append({"param": complex(tau), "from": chart, "to": new})
        chart = new
        current = _to_chart(fam, chart, regular)
        if quad is not None:
            total = log_tau[-1]
            order = quad.order(chart)
            if order:
                log_zero = cmath.log(quad.zero_variable(chart, current))
            level = total - order * log_zero
        seg = _segment_index(path, tau, 0)
        if abs(tau - path[-1]) <= 1e-13 * (1 + abs(path[-1])):
            break
        path = [tau] + path[seg + 1:]
    return Trajectory(fam, ff.flow_id, ff.epsilon, np.array(params), np.array(states),
                      np.array(charts), np.array(cstates), switches,
                      log_tau=np.array(log_tau) if quad is not None else None,
                      normalization=ff.normalization)


# ---------------------------------------------------------------------------
# pole fits

@dataclass(frozen=True)
class PoleFit:
    """Local expansion of q at a pole of the w1 flow.

    ``q ~ leading / (t - t0)**order + ...``.  ``subleading`` holds the free
    parameters of the expansion: ``rho`` and ``q0`` (PIII3, the constant term
    of q and the slope of r) or ``c`` and ``q0`` (PII, the quadratic term of r
    and the cubic term of q).  ``H0`` is the base value the pole parameters
    determine; ``residual`` is the worst relative misfit over the window.
    """
    t0: complex
    order: int
    leading: complex
    subleading: dict
    H0: complex
    residual: float
    chart: int = CHART_POLE


FIT_TOL = Tolerances(ode_rel=1e-13)
FIT_ATOL = 1e-30


def _fit_samples(n: int, window: tuple[float, float]) -> np.ndarray:
    lo, hi = (math.log10(w) for w in window)
    golden = 0.5 * (math.sqrt(5) - 1)
    return np.array([10 ** (lo + (hi - lo) * j / (n - 1)) * cmath.exp(2j * math.pi * golden * j)
                     for j in range(n)])


def _series_reciprocal(a: np.ndarray) -> np.ndarray:
    b = np.zeros_like(a)
    b[0] = 1 / a[0]
    for k in range(1, len(a)):
        b[k] = -np.dot(a[1:k + 1], b[k - 1::-1]) / a[0]
    return b


def pole_fit(traj: Trajectory, which: int = 0, window: tuple[float, float] = (1e-4, 1e-2),
             n: int = 30, degree: int = 8) -> PoleFit:
    """Fit the local pole expansion of q near the ``which``-th pole visit.

    The pole time is located by Newton iteration on a chart variable with a
    simple zero there; the chart equations are then integrated from the pole
    to ``n`` points at distances spread log-uniformly over ``window`` and the
    analytic chart variable ``1/q`` is fitted by a polynomial whose series
    reciprocal gives the Laurent coefficients of q.

    Raises
    ------
    NoPoleInSpan
        If the trajectory never entered a pole chart.
    FitRejected
        If the fitted expansion misses the samples by more than 1e-5.
    """
    fam, eps = traj.family, traj.epsilon
    runs, k = [], 0
    charts = np.asarray(traj.charts)
    while k < len(charts):
        if charts[k] != CHART_REGULAR:
            j = k
            while j < len(charts) and charts[j] == charts[k]:
                j += 1
            runs.append((k, j))
            k = j
        else:
            k += 1
    if not runs or fam not in POLE_THRESHOLDS:
        raise NoPoleInSpan("the trajectory never entered a pole chart")
    if not -len(runs) <= which < len(runs):
        raise NoPoleInSpan(f"pole visit {which} requested, {len(runs)} available")
    lo, hi = runs[which]
    best = min(range(lo, hi), key=lambda i: abs(traj.chart_states[i][3]))
    chart = int(charts[best])
    y = np.array(traj.chart_states[best], dtype=complex)
    t = complex(traj.params[best])
    rhs = lambda tau, z: pole_chart_field(fam, eps, z)
    proj = lambda tau, z: _project_pole_chart(fam, z)

    def advance(y0, t_from, t_to):
        if t_to == t_from:
            return y0
        return ode_integrate(rhs, y0, [t_from, t_to], FIT_TOL, record_steps=False,
                             project=proj, atol=FIT_ATOL).final

    # simple zero at the pole: p in the PIII3 chart, u = 1/q in the PII chart
    slot = 4 if fam is FamilyId.PIII3 else 3
    for _ in range(30):
        step = -y[slot] / rhs(t, y)[slot]
        y = advance(y, t, t + step)
        t = t + step
        if abs(step) < 1e-15 * (1 + abs(t)):
            break
    taus = _fit_samples(n, window)
    ys = [advance(y, t, t + tau) for tau in taus]
    us = np.array([z[3] for z in ys])
    regular = [_from_pole_chart(fam, z) for z in ys]
    rs = np.array([z[5] for z in regular])
    slope = np.polyfit(np.log(np.abs(taus)), np.log(np.abs(us)), 1)[0]
    order = int(round(slope.real))
    if order not in (1, 2) or abs(slope - order) > 0.1:
        raise FitRejected(f"vanishing order of 1/q is {slope:.3f}, expected 1 or 2")
    basis = np.vstack([taus ** (order + k) for k in range(degree)]).T
    w = 1 / np.abs(us)
    coef = np.linalg.lstsq(basis * w[:, None], us * w, rcond=None)[0]
    recip = _series_reciprocal(coef)
    qs = 1 / us
    q_fit = sum(recip[k] * taus ** (k - order) for k in range(degree))
    r_basis = np.vstack([taus ** k for k in range(degree)]).T
    r_coef = np.linalg.lstsq(r_basis, rs, rcond=None)[0]
    residual = float(max(np.max(np.abs(q_fit - qs) / np.abs(qs)),
                         np.max(np.abs(r_basis @ r_coef - rs))))
    H = complex(y[1])
    if fam is FamilyId.PIII3:
        rho = complex(r_coef[1])
        sub = {"rho": rho, "q0": complex(recip[2])}
        H0 = H - 2 * eps * eps * t * rho
    else:
        sub = {"c": complex(r_coef[2]), "q0": complex(recip[4])}
        H0 = H
    if residual > 1e-5:
        raise FitRejected(f"pole expansion residual {residual:.2e} exceeds 1e-5")
    return PoleFit(t, order, complex(recip[0]), sub, H0, residual, chart)


# ---------------------------------------------------------------------------
# second-order equations and commutators

def painleve_rhs(fp: FiberPoint, dq: complex) -> complex:
    """Right-hand side of the second-order equation for q along w1, given dq/dt.

    PIII3: (dq)**2/q - dq/t + (2 q**2/t - 2/t**2)/eps**2; PII:
    (2 q**3 + q t - (alpha + eps s))/eps**2; PI: (6 q**2 + 2 t)/eps**2.
    """
    q, t, eps = fp.q, fp.t, fp.epsilon
    if fp.family is FamilyId.PIII3:
        return dq * dq / q - dq / t + (2 * q * q / t - 2 / t ** 2) / eps ** 2
    if fp.family is FamilyId.PII:
        return (2 * q ** 3 + q * t - (fp.alpha + eps * fp.s)) / eps ** 2
    return (6 * q * q + 2 * t) / eps ** 2


def second_order_residual(fp: FiberPoint, normalization: str = "isomonodromic",
                          tol: Tolerances = Tolerances(ode_rel=1e-13)) -> float:
    """|q'' - painleve_rhs| with q(t) obtained by integrating w1 and differentiated by FD."""
    ff = flow_field(fp.family, "w1", fp.epsilon, normalization)
    y0 = state_of(fp)
    rhs = _regular_rhs(ff)

    def q_at(h):
        if h == 0:
            return fp.q
        return ode_integrate(rhs, y0, [fp.t, fp.t + h], tol, record_steps=False,
                             project=lambda tau, z: project_p(fp.family, z)).final[3]

    d1 = fd_derivative(q_at, 0j, [1.0], tol=tol).value
    d2 = fd_derivative(q_at, 0j, [1.0, 1.0], tol=tol).value
    return float(abs(d2 - painleve_rhs(fp, d1)))


def _heun_step(ff: FlowField, y: np.ndarray, h: complex) -> np.ndarray:
    rhs = _regular_rhs(ff)
    k1 = rhs(0, y)
    k2 = rhs(0, y + h * k1)
    return project_p(ff.family, y + 0.5 * h * (k1 + k2))


def parameter_square_defect(fp: FiberPoint, h: float, flows: tuple[str, str] = ("w1", "w2"),
                            normalization: str = "isomonodromic") -> float:
    """Endpoint gap of the two orders of an h-by-h square in the flow parameters.

    Each side is a single Heun step, so the gap is ``h**2`` times the
    commutator of the parameter-normalized fields plus ``O(h**3)``; commuting
    flows show third-order decay.
    """
    fa = flow_field(fp.family, flows[0], fp.epsilon, normalization)
    fb = flow_field(fp.family, flows[1], fp.epsilon, normalization)
    y = state_of(fp)
    ab = _heun_step(fb, _heun_step(fa, y, h), h)
    ba = _heun_step(fa, _heun_step(fb, y, h), h)
    return float(np.max(np.abs(ab - ba)))
