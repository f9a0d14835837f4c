"""Vertical coordinates, Plebanski functions and the linear Joyce connection.

Fiber points are sent to vertical coordinates ``theta`` (``theta_first`` is
the coordinate dual to the logarithmic time for PIII3 and to the time for
PI/PII) either by quadrature of incomplete abelian integrals or through the
Weierstrass uniformization of the spectral curve.
"""
from __future__ import annotations

import cmath
import functools
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .elliptic import abel_map, reduce_argument, reduce_to_weierstrass, weierstrass_eval
from .errors import (DenominatorZero, FamilyMismatch, JacobianSingular, LatticePoint,
                     SheetSingular)
from .families import BasePoint, FamilyId, FiberPoint
from .isomonodromy import FlowField, displaced, state_of
from .numerics import Tolerances, contour_derivative, fd_derivative
from .spectral import branch_points, cycle_basis, period, period_matrix

TWO_PI_I = 2j * math.pi
THETA_TOL = 1e-7

# Names of the vertical directions per family, in the order (first, H[, alpha])
DIRECTIONS = {FamilyId.PIII3: ("s", "H"), FamilyId.PII: ("t", "H", "alpha"),
              FamilyId.PI: ("t", "H")}
# Skew coefficient of the quadratic term of the heavenly equation
ETA = {FamilyId.PIII3: 4j * math.pi, FamilyId.PII: TWO_PI_I, FamilyId.PI: TWO_PI_I}


# ---------------------------------------------------------------------------
# theta coordinates and their lattice

@dataclass(frozen=True)
class ThetaCoords:
    """Vertical coordinates of a fiber point.

    ``lattice`` holds the two ambiguity vectors in the ``(theta_first,
    theta_H)`` plane; values are meaningful modulo their integer span.
    ``theta_alpha`` is ``1/2 - s`` for PII and zero otherwise.
    """
    family: FamilyId
    theta_first: complex
    theta_H: complex
    theta_alpha: complex = 0j
    lattice: tuple = ()

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.theta_first, self.theta_H], dtype=complex)

    def distance(self, other: "ThetaCoords") -> float:
        """Distance modulo the lattice of ``self``."""
        d = lattice_distance(self.vector - other.vector, self.lattice)
        return max(d, abs(self.theta_alpha - other.theta_alpha))

    def equivalent(self, other: "ThetaCoords", tol: float = THETA_TOL) -> bool:
        return self.distance(other) <= tol * max(1.0, float(np.max(np.abs(self.vector))))

    def negated(self) -> "ThetaCoords":
        return ThetaCoords(self.family, -self.theta_first, -self.theta_H,
                           -self.theta_alpha, self.lattice)


def lattice_distance(delta: np.ndarray, lattice) -> float:
    """Norm of ``delta`` after subtracting the nearest integer lattice combination."""
    delta = np.asarray(delta, dtype=complex)
    if not lattice:
        return float(np.max(np.abs(delta)))
    basis = np.array(lattice, dtype=complex)
    A = np.concatenate([basis.T.real, basis.T.imag])
    rhs = np.concatenate([delta.real, delta.imag])
    coeff = np.linalg.lstsq(A, rhs, rcond=None)[0]
    m0 = np.rint(coeff)
    best = math.inf
    for dm in (-1, 0, 1):
        for dn in (-1, 0, 1):
            shift = (m0[0] + dm) * basis[0] + (m0[1] + dn) * basis[1]
            best = min(best, float(np.max(np.abs(delta - shift))))
    return best


@functools.lru_cache(maxsize=256)
def _cycles(base: BasePoint):
    return cycle_basis(base)


@functools.lru_cache(maxsize=256)
def theta_lattice(base: BasePoint) -> tuple:
    """Ambiguity vectors ``2 pi i inv(M)`` with ``M`` the period matrix (beta_i, omega_i)."""
    M = period_matrix(base, _cycles(base))
    inv = np.linalg.inv(M)
    return tuple(tuple(complex(c) for c in TWO_PI_I * inv[:, k]) for k in range(2))


# ---------------------------------------------------------------------------
# uniformization backend

@dataclass(frozen=True)
class UniformizedFiber:
    """Abel image ``v`` of ``(q, p)`` and the regularized reference parameter ``w``."""
    v: complex
    w: complex


def _abel_image(fp: FiberPoint, near: complex | None = None):
    red = reduce_to_weierstrass(fp.base)
    X, Y = red.forward(fp.q, fp.p)
    v = abel_map(X, Y, red.data)
    if near is not None:
        _, m, n = reduce_argument(near - v, red.data)
        w1, w2 = red.data.periods
        v = v + m * w1 + n * w2
    return v, red


def _uniform_theta_h(fp: FiberPoint, v: complex, red) -> complex:
    wp, dwp, zeta = weierstrass_eval(v, red.data)
    t, H = fp.t, fp.H
    if fp.family is FamilyId.PIII3:
        return zeta + H * v / 3 - 3 * fp.r * dwp / (3 * wp - H)
    if fp.family is FamilyId.PII:
        return zeta + t * v / 12 + fp.q / 2 - fp.p * fp.r - fp.q * fp.s
    return zeta - 2 * fp.p * fp.r


def _check_sheet(fp: FiberPoint) -> None:
    if abs(fp.p) <= 1e-12 * max(1.0, abs(fp.q)):
        raise SheetSingular("p = 0: the fiber point sits on a branch point")


def to_uniformized(fp: FiberPoint, near: complex | None = None) -> UniformizedFiber:
    """The chart ``(v, w)`` of a PIII3 or PII fiber point."""
    v, _ = _abel_image(fp, near)
    if fp.family is FamilyId.PIII3:
        return UniformizedFiber(v, (1 + 2 * fp.r) / v)
    if fp.family is FamilyId.PII:
        return UniformizedFiber(v, (v / 2 + fp.t * v ** 3 / 12 - fp.r) / v ** 2)
    raise FamilyMismatch("the (v, w) chart is defined for PIII3 and PII")


def _point_of_v(base: BasePoint, v: complex):
    red = reduce_to_weierstrass(base)
    wp, dwp, zeta = weierstrass_eval(v, red.data)
    q, p = red.inverse(wp, dwp)
    return q, p, wp, dwp, zeta


def from_uniformized(base: BasePoint, chart: UniformizedFiber,
                     epsilon: complex = 1 + 0j) -> FiberPoint:
    """Fiber point with Abel image ``v`` and reference parameter ``w`` (``s = 0``)."""
    v, w = chart.v, chart.w
    q, p, *_ = _point_of_v(base, v)
    if base.family is FamilyId.PIII3:
        r = -0.5 + w * v / 2
    elif base.family is FamilyId.PII:
        r = v / 2 - w * v ** 2 + base.t * v ** 3 / 12
    else:
        raise FamilyMismatch("the (v, w) chart is defined for PIII3 and PII")
    return FiberPoint(base, q, p, r, 0, epsilon)


# ---------------------------------------------------------------------------
# period backend

_GX, _GW = np.polynomial.legendre.leggauss(24)
_PANELS = 24
_NODES = np.concatenate([(k + (_GX + 1) / 2) / _PANELS for k in range(_PANELS)])
_WEIGHTS = np.concatenate([_GW / (2 * _PANELS)] * _PANELS)
_GRID = np.linspace(0.0, 1.0, 4001)


def _continued_root(square, start: float, value: complex, taus: np.ndarray) -> np.ndarray:
    """Square root of ``square(tau)`` on [0, 1], continued from ``value`` at ``start``."""
    allt = np.unique(np.concatenate([_GRID, taus, [start]]))
    if start == 1.0:
        allt = allt[::-1]
    out = {}
    prev = prev2 = None
    for tt in allt:
        w = cmath.sqrt(square(tt))
        ref = value if prev is None else (prev if prev2 is None else 2 * prev - prev2)
        if abs(w - ref) > abs(w + ref):
            w = -w
        out[tt] = w
        prev2, prev = prev, w
    return np.array([out[tt] for tt in taus])


def _leg(integrands, square, start: float, value: complex, endpoint_root: bool = False):
    """Integrals over [0, 1] of ``f(tau, Y)`` for each ``f`` with ``Y = sqrt(square)``.

    With ``endpoint_root`` the substitution ``tau = 1 - u**2`` absorbs an
    inverse square root at ``tau = 1``.
    """
    if endpoint_root:
        taus, jac = 1 - _NODES ** 2, 2 * _NODES
    else:
        taus, jac = _NODES, np.ones_like(_NODES)
    Y = _continued_root(square, start, value, taus)
    return [complex(np.sum(_WEIGHTS * jac * np.array([f(tt, yy) for tt, yy in zip(taus, Y)])))
            for f in integrands]


def _dist_to_segment(z, a, b) -> float:
    d = b - a
    u = min(1.0, max(0.0, ((z - a) * d.conjugate()).real / abs(d) ** 2))
    return abs(z - (a + u * d))


def _dist_to_ray(z, a) -> float:
    """Distance from ``z`` to the ray from ``a`` away from the origin."""
    e = a / abs(a)
    u = max(0.0, ((z - a) * e.conjugate()).real)
    return abs(z - (a + u * e))


def _finite_roots(base: BasePoint) -> list[complex]:
    return [pt.x for pt in branch_points(base).points
            if pt.x != 0 and cmath.isfinite(pt.x)]


def _detour_candidates(q: complex, roots: Sequence[complex]) -> list[complex]:
    scale = max([abs(q)] + [abs(z) for z in roots])
    out = []
    for radius in (0.5, 1.0, 1.5):
        for k in range(12):
            m = q + radius * scale * cmath.exp(2j * math.pi * k / 12)
            if abs(m) > 1e-3 * scale:
                out.append(m)
    return out


def _track_segment(base: BasePoint, a: complex, b: complex, y_b: complex, forms):
    """Integrals from ``a`` to ``b`` of ``f(x, y) dx`` with y continued from ``y_b``; returns y(a)."""
    d = b - a
    square = lambda tau: base.q0(a + d * tau)
    vals = _leg([lambda tau, y, f=f: f(a + d * tau, y) * d for f in forms], square, 1.0, y_b)
    y_a = _continued_root(square, 1.0, y_b, np.array([0.0]))[0]
    return vals, y_a


def _piii_periods(fp: FiberPoint):
    base = fp.base
    t, H, q, p, r = fp.t, fp.H, fp.q, fp.p, fp.r
    roots = _finite_roots(base)

    def clearance(path):
        return min(_dist_to_segment(z, a, b) for z in roots for a, b in zip(path[:-1], path[1:]))

    spread = min(abs(z) for z in roots)
    path = [q, 0j]
    if clearance(path) < 0.2 * spread:
        path = max(([q, m, 0j] for m in _detour_candidates(q, roots)), key=clearance)
    omega_int = beta_int = 0j
    y = p
    # legs from q towards 0, the last one through the puncture
    legs = list(zip(path[1:], path[:-1]))
    for a, b in legs[:-1]:
        (wo, be), y = _track_segment(base, a, b, y,
                                     [lambda x, yy: 1 / (2 * x * x * yy),
                                      lambda x, yy: t / (2 * x * yy)])
        omega_int += wo
        beta_int += be
    m = legs[-1][1]
    # x = m tau**2 near the puncture, Y = tau**3 y
    square = lambda tau: t * tau ** 4 / m + H * tau ** 2 / m ** 2 + 1 / m ** 3
    wo, be = _leg([lambda tau, Y: 1 / (m * Y), lambda tau, Y: t * tau ** 2 / Y], square, 1.0, y)
    return omega_int + wo, -(beta_int + be) - 2 * p * q * r


def _pi_periods(fp: FiberPoint):
    base = fp.base
    t, H, q, p, r = fp.t, fp.H, fp.q, fp.p, fp.r
    roots = _finite_roots(base)

    def clearance(path):
        d = min(_dist_to_ray(z, path[0]) for z in roots)
        for a, b in zip(path[:-1], path[1:]):
            d = min(d, min(_dist_to_segment(z, a, b) for z in roots))
        return d

    spread = max(abs(z) for z in roots)
    path = [q]
    if clearance(path) < 0.2 * spread or abs(q) < 0.2 * spread:
        path = max(([m, q] for m in _detour_candidates(q, roots)), key=clearance)
    omega_int = reg_int = 0j
    y = p
    for a, b in zip(path[-2::-1], path[:0:-1]):
        (wo, be), y = _track_segment(base, a, b, y,
                                     [lambda x, yy: 1 / (2 * yy),
                                      lambda x, yy: (t * x + 2 * H) / (2 * x * x * yy)])
        omega_int += wo
        reg_int += be
    m = path[0]
    # ray x = m / tau**2 from infinity, Y = tau**3 y
    square = lambda tau: m ** 3 * (1 + t * tau ** 4 / m ** 2 + H * tau ** 6 / m ** 3)
    wo, be = _leg([lambda tau, Y: -m / Y,
                   lambda tau, Y: -(t * m * tau ** 2 + 2 * H * tau ** 4) / (m * Y)],
                  square, 1.0, y)
    return omega_int + wo, -(p / q + reg_int + be) - 2 * p * r


def _pii_periods(fp: FiberPoint):
    base = fp.base
    t, H, a, q, p, r, s = fp.t, fp.H, fp.alpha, fp.q, fp.p, fp.r, fp.s
    roots = _finite_roots(base)
    scale = max(abs(z) for z in roots)

    def score(x0):
        others = [z for z in roots if z is not x0]
        return min(min(_dist_to_ray(z, x0), _dist_to_segment(z, x0, q)) for z in others)

    x0 = max((z for z in roots if abs(z) > 1e-3 * scale), key=score)
    # ray from infinity_+ to x0: x = x0 / tau, P(tau) = (1 - tau) Pt(tau)
    coeffs = np.array([1, 0, t / x0 ** 2, -2 * a / x0 ** 3, 2 * H / x0 ** 4], dtype=complex)
    quotient, _ = np.polynomial.polynomial.polydiv(coeffs, np.array([1, -1], dtype=complex))
    pt = lambda tau: np.polynomial.polynomial.polyval(tau, quotient)

    def ray_omega(tau, Y):
        return -1 / (x0 * Y * cmath.sqrt(1 - tau))

    def ray_beta(tau, Y):
        root_p = cmath.sqrt(1 - tau) * Y
        poly = t / x0 ** 2 - 2 * a * tau / x0 ** 3 + 2 * H * tau ** 2 / x0 ** 4
        return (x0 / 2) * poly / ((1 + root_p) * root_p)

    i1, j1 = _leg([ray_omega, ray_beta], pt, 0.0, 1.0, endpoint_root=True)
    # segment x0 -> q: x = x0 + d tau**2, y = tau sqrt(R)
    d = q - x0
    square = lambda tau: base.q0(x0 + d * tau ** 2) / tau ** 2 if tau != 0 else base.dq0(x0) * d
    i2, j2 = _leg([lambda tau, Y: 2 * d / Y,
                   lambda tau, Y: (x0 + d * tau ** 2) ** 2 * d / Y - d * tau],
                  square, 1.0, p)
    return i1 + i2, -(j1 + j2) - (p * r + q * s) - q / 2


# ---------------------------------------------------------------------------
# theta map and its inverse

def theta_map(fp: FiberPoint, backend: str = "uniformization", with_lattice: bool = True,
              near: complex | None = None) -> ThetaCoords:
    """Vertical coordinates of a fiber point.

    Parameters
    ----------
    fp : FiberPoint
        Regular fiber point with ``p != 0``.
    backend : {"uniformization", "periods"}
        Closed elliptic-function formulas or quadrature of incomplete integrals.
    with_lattice : bool
        Attach the ambiguity vectors (costs one cycle-basis construction per base).
    near : complex, optional
        Uniformization only: choose the Abel image nearest to this value.

    Returns
    -------
    ThetaCoords
    """
    _check_sheet(fp)
    fam = fp.family
    if backend == "uniformization":
        v, red = _abel_image(fp, near)
        first, th = v, _uniform_theta_h(fp, v, red)
    elif backend == "periods":
        first, th = {FamilyId.PIII3: _piii_periods, FamilyId.PI: _pi_periods,
                     FamilyId.PII: _pii_periods}[fam](fp)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    theta_alpha = 0.5 - fp.s if fam is FamilyId.PII else 0j
    lattice = theta_lattice(fp.base) if with_lattice else ()
    return ThetaCoords(fam, complex(first), complex(th), complex(theta_alpha), lattice)


def theta_inverse(base: BasePoint, theta, epsilon: complex = 1 + 0j) -> FiberPoint:
    """Fiber point with the given vertical coordinates.

    ``theta`` is a :class:`ThetaCoords` or a tuple ``(first, H[, alpha])``.
    Since ``theta_first`` is the Abel image itself and ``theta_H`` is affine
    in the reference parameter, the inverse is closed-form.  For PIII3 the
    other preimage is :func:`involution_piii` of the result.
    """
    if isinstance(theta, ThetaCoords):
        first, th, tha = theta.theta_first, theta.theta_H, theta.theta_alpha
    else:
        first, th, *rest = (complex(z) for z in theta)
        tha = rest[0] if rest else 0.5
    fam = base.family
    try:
        q, p, wp, dwp, zeta = _point_of_v(base, first)
    except LatticePoint as exc:
        raise LatticePoint("theta_first is a lattice point: the preimage has q at the "
                           "puncture (the limit there has r = -1/2 for PIII3)") from exc
    t, H = base.t, base.H
    s = 0j
    if fam is FamilyId.PIII3:
        r = (zeta + H * first / 3 - th) * (3 * wp - H) / (3 * dwp)
    elif fam is FamilyId.PII:
        s = 0.5 - tha
        r = (zeta + t * first / 12 + q / 2 - q * s - th) / p
    else:
        r = (zeta - th) / (2 * p)
    return FiberPoint(base, q, p, r, s, epsilon)


# ---------------------------------------------------------------------------
# Plebanski functions

def _nonzero(value: complex, scale: float, name: str) -> complex:
    if abs(value) <= 1e-14 * max(1.0, scale):
        raise DenominatorZero(f"{name} vanishes")
    return value


def _w_piii(t, H, q, p, r):
    den = _nonzero(6 * (H * H - 4 * t), abs(H) ** 2 + abs(t), "H^2 - 4t")
    poly = (t * q + (H + 6 * t * q) * r + (6 * H + 12 * t * q) * r ** 2
            + 8 * p * p * q * q * r ** 3)
    return p * q / den * poly


def _w_pi(t, H, q, p, r):
    den = _nonzero(2 * (4 * t ** 3 + 27 * H * H), abs(t) ** 3 + abs(H) ** 2, "4t^3 + 27H^2")
    poly = (t - (9 * H - 6 * t * q) * r + (8 * t * t - 18 * H * q + 12 * t * q * q) * r ** 2
            + 8 * t * p * p * r ** 3)
    return p / den * poly


def _w_pii_special(t, H, q, p, r):
    _nonzero(H, abs(t) ** 2, "H")
    den = _nonzero(48 * H * (t * t - 8 * H), abs(H) * (abs(t) ** 2 + abs(H)), "H (t^2 - 8H)")
    poly = (-t * q - 2 * r * (2 * t * t + 3 * q * q * t - 12 * H)
            + 12 * r * r * q * (-t * t - q * q * t + 4 * H) - 8 * r ** 3 * p * p * t)
    return p / den * poly


def _w_pii_general(t, H, a, q, p, r, s):
    c1 = -t ** 3 + 8 * H * t - 18 * a * a
    c2 = -a * (t * t + 24 * H)
    delta = 16 * (-27 * a ** 4 - a * a * t * (t * t - 72 * H) + 2 * H * (t * t - 8 * H) ** 2)
    _nonzero(delta, (abs(t) ** 3 + abs(H) ** 1.5 + abs(a)) ** 4 / 10, "Delta")
    e = 4 * H * t * t - 3 * a * a * t - 32 * H * H
    coeff = {
        (0, 0): p * (2 / 3 * c1 * q + 2 * c2),
        (0, 1): q * (4 * c1 * q * q + 4 * c2 * q
                     + 4 / 3 * (96 * H * H + 4 * H * t * t - 2 * t ** 4 - 27 * a * a * t)),
        (0, 2): 8 * p * (c1 * q - c2),
        (0, 3): 16 * q * (c1 / 3 * q * q - c2 * q + e),
        (1, 0): 4 * p * (c1 * q * q + 2 * c2 * q
                         + (-96 * H * H + 28 * H * t * t - 2 * t ** 4 - 45 * a * a * t) / 3),
        (1, 1): 16 * c1 * p * p,
        (1, 2): 16 * p * (c1 * q * q - 2 * c2 * q + e),
        (2, 0): 8 * p * (c1 * q ** 3 + c2 * q * q
                         + q * (-32 * H * H + 12 * H * t * t - 21 * t * a * a - t ** 4)
                         + a * (27 * a * a - 24 * H * t + t ** 3)),
        (2, 1): 16 * p * p * (c1 * q - c2),
        (3, 0): 16 * p ** 3 / 3 * c1,
    }
    return sum(c * r ** k * s ** m for (k, m), c in coeff.items()) / delta


def plebanski_w(fp: FiberPoint) -> complex:
    """Plebanski function at a fiber point, evaluated on the stored sheet of ``p``.

    Raises
    ------
    DenominatorZero
        On the discriminant locus of the closed form.
    """
    t, H, q, p, r = fp.t, fp.H, fp.q, fp.p, fp.r
    if fp.family is FamilyId.PIII3:
        return complex(_w_piii(t, H, q, p, r))
    if fp.family is FamilyId.PI:
        return complex(_w_pi(t, H, q, p, r))
    if fp.alpha == 0 and fp.s == 0:
        return complex(_w_pii_special(t, H, q, p, r))
    return complex(_w_pii_general(t, H, fp.alpha, q, p, r, fp.s))


def plebanski_w_general(fp: FiberPoint) -> complex:
    """PII Plebanski function from the general-alpha expansion in (r, s)."""
    if fp.family is not FamilyId.PII:
        raise FamilyMismatch("the general-alpha expansion exists for PII only")
    return complex(_w_pii_general(fp.t, fp.H, fp.alpha, fp.q, fp.p, fp.r, fp.s))


# ---------------------------------------------------------------------------
# vertical vector fields and third derivatives of K

def _with_p_entry(fp: FiberPoint, v: np.ndarray) -> np.ndarray:
    v[4] = fp.base.dq0(fp.q) * v[3] / (2 * fp.p)
    return v


def vertical_fields(fp: FiberPoint) -> dict[str, np.ndarray]:
    """Coordinate fields of the vertical coordinates on ``(t, H, alpha, q, p, r, s)``.

    Keys are the direction names of :data:`DIRECTIONS`; the base entries are
    zero and the ``p`` entry keeps the point on the curve.
    """
    _check_sheet(fp)
    t, a, q, p, r, s = fp.t, fp.alpha, fp.q, fp.p, fp.r, fp.s
    fam = fp.family
    out = {}

    def field_(dq=0j, dr=0j, ds=0j):
        v = np.zeros(7, dtype=complex)
        v[3], v[5], v[6] = dq, dr, ds
        return _with_p_entry(fp, v)

    if fam is FamilyId.PIII3:
        out["s"] = field_(2 * q * q * p, (2 * r - 2 * t * r * q * q - t * q * q) / (2 * p * q * q))
        out["H"] = field_(dr=-1 / (2 * q * p))
    elif fam is FamilyId.PII:
        e = 2 * q ** 3 + t * q - a
        out["t"] = field_(p, -(r / p * e + s + q * q / (2 * p)))
        out["H"] = field_(dr=-1 / p)
        out["alpha"] = field_(dr=q / p, ds=-1)
    else:
        out["t"] = field_(2 * p, -(q + 2 * r * (3 * q * q + t)) / (2 * p))
        out["H"] = field_(dr=-1 / (2 * p))
    return out


def _symmetric(names: Sequence[str], values: dict) -> dict:
    """Fill all orderings of each index triple from values keyed by one ordering."""
    out = {}
    for key, val in values.items():
        for perm in set(itertools.permutations(key)):
            out[perm] = complex(val)
    for i in names:
        for j in names:
            for k in names:
                out.setdefault((i, j, k), 0j)
    return out


def k_third_derivatives(fp: FiberPoint) -> dict[tuple[str, str, str], complex]:
    """Closed-form third vertical derivatives of the second Plebanski-type potential K.

    Returns a dictionary over all ordered index triples of direction names.
    """
    _check_sheet(fp)
    t, H, a, q, p, r, s = fp.t, fp.H, fp.alpha, fp.q, fp.p, fp.r, fp.s
    if fp.family is FamilyId.PIII3:
        p2 = p * p
        vals = {
            ("s", "s", "s"): (-3 * t * t / (2 * p2) + q * t
                              + 2 * r * t / (p2 * q * q) * (3 - 3 * t * q * q + 2 * p2 * q ** 3)
                              + 2 * r * r / (p2 * q ** 4) * (-1 + 2 * H * q + 10 * t * q * q
                                                            + 2 * H * t * q ** 3
                                                            - t * t * q ** 4)),
            ("s", "s", "H"): -t / (p2 * q) + 2 * r / (p2 * q ** 3) * (1 - t * q * q),
            ("s", "H", "H"): -1 / (2 * q * q * p2),
            ("H", "H", "H"): 0,
        }
    elif fp.family is FamilyId.PII:
        p2 = p * p
        e = 2 * q ** 3 + t * q - a
        vals = {
            ("H", "H", "H"): 0,
            ("t", "H", "H"): -1 / p2,
            ("t", "t", "H"): -2 * r * e / p2 - q * q / p2 - s / p,
            ("t", "t", "t"): (-3 * q ** 4 / (4 * p2) + r * (2 * q - 3 * q * q * e / p2)
                              + r * r * (6 * q * q + t - 3 * e * e / p2)
                              - 3 * s * q * q / (2 * p) - 3 * s * r * e / p - s * s),
            ("alpha", "H", "H"): 0,
            ("alpha", "t", "H"): q / p2,
            ("alpha", "t", "t"): q ** 3 / p2 - r + s * q / p + 2 * r * q * e / p2,
            ("alpha", "alpha", "H"): 0,
            ("alpha", "alpha", "t"): -q * q / p2,
        }
    else:
        raise FamilyMismatch("closed-form K derivatives are available for PIII3 and PII")
    return _symmetric(DIRECTIONS[fp.family], vals)


# ---------------------------------------------------------------------------
# PIII3 involution

def involution_piii(fp: FiberPoint) -> FiberPoint:
    """Image under ``(q, p, r) -> (1/(q t), -t p q**2, -(r + 1/2))``."""
    if fp.family is not FamilyId.PIII3:
        raise FamilyMismatch("the involution is defined for PIII3 only")
    if fp.q == 0:
        raise DenominatorZero("q = 0")
    return FiberPoint(fp.base, 1 / (fp.q * fp.t), -fp.t * fp.p * fp.q ** 2,
                      -(fp.r + 0.5), 0, fp.epsilon)


# ---------------------------------------------------------------------------
# Euler scaling

EULER_WEIGHTS = {
    FamilyId.PIII3: {"t": 4, "H": 2, "q": -2, "p": 3, "r": 0},
    FamilyId.PII: {"t": 2 / 3, "H": 4 / 3, "q": 1 / 3, "p": 2 / 3, "r": -1 / 3},
    FamilyId.PI: {"t": 4 / 5, "H": 6 / 5, "q": 2 / 5, "p": 3 / 5, "r": -2 / 5},
}
PLEBANSKI_WEIGHT = -1


def euler_rescale(fp: FiberPoint, log_lambda: complex) -> FiberPoint:
    """Flow of the Euler field for time ``log_lambda``: each coordinate gains ``lambda**weight``.

    PII is restricted to ``alpha = s = 0``, where the scaling preserves the
    fiber.
    """
    if fp.family is FamilyId.PII and (fp.alpha != 0 or fp.s != 0):
        raise FamilyMismatch("the PII Euler field acts on the alpha = s = 0 slice")
    wts = EULER_WEIGHTS[fp.family]
    f = {k: cmath.exp(w * log_lambda) for k, w in wts.items()}
    base = fp.base.with_(t=fp.t * f["t"], H=fp.H * f["H"])
    return FiberPoint(base, fp.q * f["q"], fp.p * f["p"], fp.r * f["r"], 0, fp.epsilon)


# ---------------------------------------------------------------------------
# second derivatives of K from the flows, and FD third derivatives

_FLOW_FOR = {"s": "w1", "t": "w1", "H": "w2", "alpha": "w3"}
_INNER_RADIUS = 5e-3
_OUTER_RADIUS = 1e-2


def _theta_along(fp: FiberPoint, direction: np.ndarray, which: str,
                 radius: float = _INNER_RADIUS):
    """Derivative of one vertical coordinate along a direction in state space."""
    v0, _ = _abel_image(fp)

    def value(h):
        moved = displaced(fp, direction, h)
        if which == "first":
            return _abel_image(moved, v0)[0]
        v, red = _abel_image(moved, v0)
        return _uniform_theta_h(moved, v, red)

    return contour_derivative(value, 0j, radius=radius)


def k_second_derivatives(fp: FiberPoint) -> dict[tuple[str, str], complex]:
    """Second vertical derivatives of K read off the push-forward of the flows.

    The flow attached to a base direction ``i`` pushes forward to
    ``d/dz_i + (1/eps) d/dtheta_i + K_{i H} d/dtheta_first - K_{i first} d/dtheta_H``,
    so both entries come from derivatives of the uniformized theta map along
    the flow at ``eps = 1``.
    """
    if fp.family is FamilyId.PI:
        raise FamilyMismatch("K derivatives are available for PIII3 and PII")
    names = DIRECTIONS[fp.family]
    first = names[0]
    unit = fp.with_(epsilon=1)
    out = {}
    for name in names:
        vec = FlowField(fp.family, _FLOW_FOR[name]).components(state_of(unit))
        d_first = _theta_along(unit, vec, "first")
        d_h = _theta_along(unit, vec, "H")
        if name == first:
            d_first -= 1
        if name == "H":
            d_h -= 1
        out[(name, "H")] = d_first
        out[(name, first)] = -d_h
    sym = {}
    for (i, j), val in out.items():
        sym[(i, j)] = val
        sym.setdefault((j, i), val)
    return sym


def k_third_derivatives_fd(fp: FiberPoint, radius: float = _OUTER_RADIUS):
    """Third derivatives of K by differentiating :func:`k_second_derivatives` along the vertical fields.

    Both derivative levels use the trapezoid rule on small circles in the
    complex step (the maps are analytic), which keeps the error near roundoff.

    Returns
    -------
    values : dict
        ``values[(i, j, k)]`` is the derivative of ``K_{jk}`` along direction ``i``
        (PII ``K_{alpha alpha}`` is not reachable from the flows, so triples
        needing it are absent).
    symmetry_defect : float
        Largest spread among the orderings of each index triple.
    """
    names = DIRECTIONS[fp.family]
    fields = vertical_fields(fp)
    values = {}
    nodes = 16
    for i in names:
        samples = []
        for k in range(nodes):
            w = radius * cmath.exp(2j * math.pi * k / nodes)
            samples.append((w, k_second_derivatives(displaced(fp, fields[i], w))))
        for key in samples[0][1]:
            values[(i,) + key] = sum(vals[key] / w for w, vals in samples) / nodes
    defect = 0.0
    for key in values:
        for perm in itertools.permutations(key):
            if perm in values:
                defect = max(defect, abs(values[perm] - values[key]))
    return values, defect


# ---------------------------------------------------------------------------
# canonical coordinates and the heavenly equation

def _periods_near(base: BasePoint, cycles, reference: np.ndarray) -> np.ndarray:
    """Period matrix over fixed cycles, falling back to quadrature if the fast path jumps."""
    M = period_matrix(base, cycles)
    if np.max(np.abs(M - reference)) > 0.05 * (1 + np.max(np.abs(reference))):
        M = period_matrix(base, cycles, method="quadrature")
    return M


def _alpha_shift(base: BasePoint, cycles, theta_alpha: complex) -> np.ndarray:
    if base.family is not FamilyId.PII:
        return np.zeros(2, dtype=complex)
    return theta_alpha * np.array([period("beta_alpha", c, base, method="quadrature")
                                   for c in cycles[:2]])


class CanonicalChart:
    """The Plebanski function in canonical coordinates near a fiber point.

    Coordinates are ``(b_1, b_2, theta_1, theta_2)`` with ``(b_1, b_2)`` the
    base coordinates (``s`` or ``t``, then ``H``) and ``theta_i`` the periods
    of the theta differential.  ``d/dz_j`` at fixed ``theta`` is
    ``sum_k inv(M)_{kj} d/db_k`` with ``M = dz/db`` the period matrix.
    """

    def __init__(self, fp: FiberPoint):
        fam = fp.family
        if fam is FamilyId.PII and (fp.alpha != 0 or fp.s != 0):
            raise ValueError("the PII canonical chart is built at alpha = s = 0")
        self.fp = fp
        self.cycles = _cycles(fp.base)
        self.M0 = period_matrix(fp.base, self.cycles)
        if abs(np.linalg.det(self.M0)) < 1e-12 * np.max(np.abs(self.M0)) ** 2:
            raise JacobianSingular("period matrix is singular")
        self.theta_alpha = 0.5 if fam is FamilyId.PII else 0j
        theta = theta_map(fp, with_lattice=False)
        self.vertical0 = theta.vector
        self.b0 = np.array([fp.base.s if fam is FamilyId.PIII3 else fp.t, fp.H])
        self.theta0 = self.M0 @ self.vertical0 + _alpha_shift(fp.base, self.cycles,
                                                               self.theta_alpha)
        self.point = np.concatenate([self.b0, self.theta0])

    def base_at(self, b) -> BasePoint:
        t = cmath.exp(b[0]) if self.fp.family is FamilyId.PIII3 else b[0]
        return self.fp.base.with_(t=t, H=b[1])

    def w(self, x) -> complex:
        base = self.base_at(x[:2])
        M = _periods_near(base, self.cycles, self.M0)
        rhs = np.asarray(x[2:], dtype=complex) - _alpha_shift(base, self.cycles,
                                                              self.theta_alpha)
        first, th = np.linalg.solve(M, rhs)
        return plebanski_w(theta_inverse(base, (first, th, self.theta_alpha)))

    def _second(self, direction: np.ndarray, radius: float, nodes: int) -> complex:
        scale = radius / max(1.0, float(np.max(np.abs(direction))))
        acc = 0j
        for k in range(nodes):
            w = scale * cmath.exp(2j * math.pi * k / nodes)
            acc += self.w(self.point + w * direction) / (w * w)
        return 2 * acc / nodes

    def derivative(self, directions, radius: float = 2e-2, nodes: int = 16) -> complex:
        """Second derivative along two directions by contour rules and polarization."""
        a, b = (np.asarray(d, dtype=complex) for d in directions)
        if np.allclose(a, b):
            return self._second(a, radius, nodes)
        return (self._second(a + b, radius, nodes) - self._second(a - b, radius, nodes)) / 4


def heavenly_residual(fp: FiberPoint, pair: tuple[int, int] = (0, 1),
                      chart: CanonicalChart | None = None) -> complex:
    """Residual of the second heavenly equation for the pair ``(i, j)`` of canonical indices.

    ``W_{theta_i z_j} - W_{theta_j z_i} - eta (W_{theta_i theta_1} W_{theta_j theta_2}
    - W_{theta_i theta_2} W_{theta_j theta_1})`` with ``eta`` the family's skew constant.
    """
    i, j = pair
    if i == j:
        return 0j
    chart = chart or CanonicalChart(fp)
    eye = np.eye(4)
    inv = np.linalg.inv(chart.M0)

    def mixed(a, b):
        # d^2 W / d theta_a d z_b
        direction = inv[0, b] * eye[0] + inv[1, b] * eye[1]
        return chart.derivative([eye[2 + a], direction])

    hess = np.array([[chart.derivative([eye[2 + a], eye[2 + b]]) for b in range(2)]
                     for a in range(2)])
    eta = ETA[fp.family]
    quad = eta * (hess[i, 0] * hess[j, 1] - hess[i, 1] * hess[j, 0])
    return complex(mixed(i, j) - mixed(j, i) - quad)


# ---------------------------------------------------------------------------
# the zero section: prepotential and linear Joyce connection

@dataclass(frozen=True)
class Prepotential:
    """``S`` with its gradient in base coordinates and the FD values of dW/dtheta at theta = 0."""
    value: complex
    gradient: tuple
    fd_gradient: tuple


def _s_and_gradient(base: BasePoint):
    t, H = base.t, base.H
    if base.family is FamilyId.PIII3:
        d = _nonzero(H * H - 4 * t, abs(H) ** 2 + abs(t), "H^2 - 4t")
        return -cmath.log(d) / 24, (t / (6 * d), -H / (12 * d))
    if base.family is FamilyId.PII:
        if base.alpha != 0:
            raise FamilyMismatch("the PII prepotential is taken at alpha = 0")
        _nonzero(H, abs(t) ** 2, "H")
        d = _nonzero(8 * H - t * t, abs(H) + abs(t) ** 2, "8H - t^2")
        return (-cmath.log(H * H * d) / 48,
                (t / (24 * d), -(12 * H - t * t) / (24 * H * d)))
    d = _nonzero(4 * t ** 3 + 27 * H * H, abs(t) ** 3 + abs(H) ** 2, "4t^3 + 27H^2")
    return -cmath.log(d) / 24, (-t * t / (2 * d), -9 * H / (4 * d))


def _w_vertical(base: BasePoint):
    """W as a function of ``(theta_first, theta_H)`` at a fixed base point."""
    def w(x):
        return plebanski_w(theta_inverse(base, (x[0], x[1], 0.5)))
    return w


def prepotential_s(base: BasePoint, fd_step: float = 1e-2) -> Prepotential:
    """Prepotential on the zero section with a finite-difference cross-check.

    The FD values are derivatives of W in ``(theta_first, theta_H)`` at
    ``theta = 0``; W is odd in theta there, so wide symmetric steps are
    accurate and keep the preimages away from the puncture.
    """
    value, grad = _s_and_gradient(base)
    w = _w_vertical(base)
    tol = Tolerances(fd_step=fd_step)
    # diagonal directions keep theta_first != 0 on every stencil point
    plus = fd_derivative(w, np.zeros(2), [np.array([1.0, 1.0])], tol=tol).value
    minus = fd_derivative(w, np.zeros(2), [np.array([1.0, -1.0])], tol=tol).value
    fd = ((plus + minus) / 2, (plus - minus) / 2)
    return Prepotential(complex(value), tuple(complex(g) for g in grad), fd)


@dataclass(frozen=True)
class JoyceConnection:
    """Linear Joyce connection at a base point.

    ``third`` are the limits of the third vertical derivatives of K at
    ``theta = 0``; ``christoffel[(a, b, c)]`` is the ``d/db_c`` component of
    ``nabla_{d/db_a} d/db_b`` in the base coordinates ``(first, H)``.
    ``flat_coordinates`` names the coordinates checked to be affine and
    ``flat_residual`` is the largest defect of that check.
    """
    third: dict
    christoffel: dict
    flat_coordinates: tuple
    flat_residual: float


def _third_at_zero(base: BasePoint, delta: float = 1e-2) -> dict:
    """Limits of the closed-form K derivatives at v = w = 0 by symmetric Richardson extrapolation."""
    def at(v):
        return k_third_derivatives(from_uniformized(base, UniformizedFiber(v, 0j)))

    samples = {h: at(h) for h in (delta, -delta, delta / 2, -delta / 2)}
    out = {}
    for key in samples[delta]:
        coarse = (samples[delta][key] + samples[-delta][key]) / 2
        fine = (samples[delta / 2][key] + samples[-delta / 2][key]) / 2
        out[key] = (4 * fine - coarse) / 3
    return out


def joyce_connection(base: BasePoint) -> JoyceConnection:
    """Christoffel symbols of the linear Joyce connection in ``(first, H)`` coordinates.

    ``nabla_{d_a} d_b = K_{ab first} d_H - K_{ab H} d_first`` with the
    third derivatives taken at ``theta = 0``.  PIII3 coordinates ``(s, H)``
    are checked to be flat; for PII the checked coordinates are
    ``(t, H - t**2/8)``.
    """
    if base.family is FamilyId.PI:
        raise FamilyMismatch("the linear Joyce connection is implemented for PIII3 and PII")
    if base.family is FamilyId.PII and base.alpha != 0:
        raise FamilyMismatch("the PII connection is taken at alpha = 0")
    first = DIRECTIONS[base.family][0]
    names = (first, "H")
    third = _third_at_zero(base)
    chris = {}
    for a in names:
        for b in names:
            chris[(a, b, "H")] = third[(a, b, first)]
            chris[(a, b, first)] = -third[(a, b, "H")]
    if base.family is FamilyId.PIII3:
        flat = (first, "H")
        hessians = {first: {}, "H": {}}
    else:
        flat = ("t", "H - t^2/8")
        hessians = {"t": {}, "H": {("t", "t"): -0.25}}
    # flat coordinate y: d_a d_b y - Gamma^c_ab d_c y = 0
    gradients = {first: {first: 1, "H": 0}, "H": {first: 0, "H": 1}}
    if base.family is FamilyId.PII:
        gradients["H"] = {"t": -base.t / 4, "H": 1}
    residual = 0.0
    for y in names:
        for a in names:
            for b in names:
                val = hessians[y].get((a, b), 0) - sum(chris[(a, b, c)] * gradients[y][c]
                                                       for c in names)
                residual = max(residual, abs(val))
    return JoyceConnection({k: complex(v) for k, v in third.items()},
                           {k: complex(v) for k, v in chris.items()}, flat, residual)
