"""Weierstrass elliptic functions for arbitrary complex invariants.

Half-periods come from the arithmetic-geometric mean of root differences,
function values from the Laurent expansion at the origin combined with the
duplication formulas, after reducing the argument to the Voronoi cell of the
period lattice.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable


from .errors import LatticePoint, OffCurve, SingularCurve
from .families import BasePoint, FamilyId
from .numerics import poly_roots

_N_LAURENT = 24


@dataclass(frozen=True)
class EllipticData:
    g2: complex
    g3: complex
    half_period_1: complex
    half_period_2: complex
    eta_1: complex
    eta_2: complex
    roots: tuple[complex, complex, complex] = (0j, 0j, 0j)

    @property
    def periods(self) -> tuple[complex, complex]:
        return 2 * self.half_period_1, 2 * self.half_period_2

    @property
    def min_period(self) -> float:
        return abs(2 * self.half_period_1)

    def legendre_defect(self) -> complex:
        return self.eta_1 * self.half_period_2 - self.eta_2 * self.half_period_1 - 0.5j * math.pi

    def lattice_coords(self, u: complex) -> tuple[float, float]:
        """Real coordinates of ``u`` in the basis (2 omega_1, 2 omega_2)."""
        w1, w2 = self.periods
        a = (u * w2.conjugate()).imag / (w1 * w2.conjugate()).imag
        b = (u * w1.conjugate()).imag / (w2 * w1.conjugate()).imag
        return a, b

    def quasi_period(self, m: int, n: int) -> complex:
        """Increment of zeta under translation by ``2m omega_1 + 2n omega_2``."""
        return 2 * m * self.eta_1 + 2 * n * self.eta_2


def discriminant(g2: complex, g3: complex) -> complex:
    return g2 ** 3 - 27 * g3 ** 2


def laurent_coefficients(g2: complex, g3: complex, n: int = _N_LAURENT) -> list[complex]:
    """Coefficients ``c_k`` with wp(u) = 1/u^2 + sum_{k>=2} c_k u^(2k-2)."""
    c = [0j, 0j, g2 / 20, g3 / 28]
    for k in range(4, n + 2):
        acc = sum(c[m] * c[k - m] for m in range(2, k - 1))
        c.append(3 * acc / ((2 * k + 1) * (k - 3)))
    return c


def _series(u: complex, coeffs: list[complex]) -> tuple[complex, complex, complex]:
    u2 = u * u
    wp = 1 / u2
    dwp = -2 / (u2 * u)
    zeta = 1 / u
    power = 1.0 + 0j  # u^(2k-4)
    for k in range(2, len(coeffs)):
        ck = coeffs[k]
        # u^(2k-2) = power * u2
        term = ck * power * u2
        wp += term
        dwp += ck * (2 * k - 2) * power * u
        zeta -= term * u / (2 * k - 1)
        power *= u2
    return wp, dwp, zeta


def _double(wp, dwp, zeta, g2):
    m = (6 * wp * wp - 0.5 * g2) / dwp
    wp2 = -2 * wp + 0.25 * m * m
    dwp2 = -dwp - m * (wp2 - wp)
    zeta2 = 2 * zeta + 0.5 * m
    return wp2, dwp2, zeta2


def raw_eval(u: complex, g2: complex, g3: complex, radius: float,
             coeffs: list[complex] | None = None) -> tuple[complex, complex, complex]:
    """Series plus duplication without lattice reduction.

    ``radius`` is the distance from 0 to the nearest nonzero lattice point;
    the argument is halved until it lies well inside the disc of convergence.
    """
    if coeffs is None:
        coeffs = laurent_coefficients(g2, g3)
    n = 0
    small = u
    while abs(small) > 0.2 * radius:
        small /= 2
        n += 1
    vals = _series(small, coeffs)
    for _ in range(n):
        vals = _double(*vals, g2)
    return vals


def _agm(a: complex, b: complex) -> complex:
    for _ in range(60):
        an = 0.5 * (a + b)
        bn = cmath.sqrt(a * b)
        if abs(an - bn) > abs(an + bn):
            bn = -bn
        a, b = an, bn
        if abs(a - b) <= 1e-16 * abs(a):
            break
    return 0.5 * (a + b)


def _root_order(roots):
    return sorted(roots, key=lambda z: (-round(z.real, 12), -round(z.imag, 12)))


def _gauss_reduce(a: complex, b: complex) -> tuple[complex, complex]:
    """Reduced basis of the lattice spanned by ``a`` and ``b``."""
    for _ in range(200):
        if abs(b) < abs(a):
            a, b = b, a
        mu = round((b * a.conjugate()).real / abs(a) ** 2)
        if mu == 0:
            break
        b = b - mu * a
    if (b / a).imag < 0:
        b = -b
    return a, b


def _half_period_candidate(e_i, e_j, e_k) -> complex:
    a = cmath.sqrt(e_i - e_j)
    b = cmath.sqrt(e_i - e_k)
    if abs(a - b) > abs(a + b):
        b = -b
    return math.pi / (2 * _agm(a, b))


def cubic_roots(g2: complex, g3: complex) -> tuple[complex, complex, complex]:
    """Roots of 4x^3 - g2 x - g3 in the deterministic order (Re desc, Im desc)."""
    r = poly_roots([4, 0, -g2, -g3])
    return tuple(_root_order(r))


def half_periods(g2: complex, g3: complex) -> tuple[complex, complex, complex, complex]:
    """Half-periods and quasi-periods ``(omega_1, omega_2, eta_1, eta_2)``.

    The returned basis is Gauss-reduced with Im(omega_2/omega_1) > 0.
    """
    g2, g3 = complex(g2), complex(g3)
    scale = max(abs(g2) ** 0.5, abs(g3) ** (1 / 3), 1e-300)
    if abs(discriminant(g2, g3)) <= 1e-12 * scale ** 6:
        raise SingularCurve("vanishing discriminant g2^3 - 27 g3^2")
    data = elliptic_data(g2, g3)
    return data.half_period_1, data.half_period_2, data.eta_1, data.eta_2


def elliptic_data(g2: complex, g3: complex) -> EllipticData:
    g2, g3 = complex(g2), complex(g3)
    scale = max(abs(g2) ** 0.5, abs(g3) ** (1 / 3), 1e-300)
    if abs(discriminant(g2, g3)) <= 1e-12 * scale ** 6:
        raise SingularCurve("vanishing discriminant g2^3 - 27 g3^2")
    e = cubic_roots(g2, g3)
    cands = [_half_period_candidate(e[0], e[1], e[2]),
             _half_period_candidate(e[1], e[2], e[0]),
             _half_period_candidate(e[2], e[0], e[1])]
    coeffs = laurent_coefficients(g2, g3)
    best = None
    for i, j in ((0, 2), (0, 1), (1, 2)):
        w1, w2 = _gauss_reduce(2 * cands[i], 2 * cands[j])
        w1, w2 = w1 / 2, w2 / 2
        if abs((w2 / w1).imag) < 1e-8:
            continue
        radius = 2 * abs(w1)
        try:
            _, _, eta1 = raw_eval(w1, g2, g3, radius, coeffs)
            _, _, eta2 = raw_eval(w2, g2, g3, radius, coeffs)
        except ZeroDivisionError:
            continue
        defect = abs(eta1 * w2 - eta2 * w1 - 0.5j * math.pi)
        if best is None or defect < best[0]:
            best = (defect, w1, w2, eta1, eta2)
        if defect < 1e-6:
            break
    if best is None or best[0] > 1e-6:
        raise SingularCurve(f"could not build a primitive period basis for g2={g2}, g3={g3}")
    _, w1, w2, eta1, _ = best
    # eta_2 from the Legendre relation
    eta2 = (eta1 * w2 - 0.5j * math.pi) / w1
    return EllipticData(g2, g3, w1, w2, eta1, eta2, tuple(e))


def reduce_argument(u: complex, ed: EllipticData) -> tuple[complex, int, int]:
    """Write ``u = u0 + 2m omega_1 + 2n omega_2`` with u0 in the Voronoi cell."""
    w1, w2 = ed.periods
    a, b = ed.lattice_coords(u)
    m0, n0 = round(a), round(b)
    best = None
    for dm in (-1, 0, 1):
        for dn in (-1, 0, 1):
            m, n = m0 + dm, n0 + dn
            u0 = u - m * w1 - n * w2
            if best is None or abs(u0) < abs(best[0]):
                best = (u0, m, n)
    return best


def weierstrass_eval(u: complex, ed: EllipticData) -> tuple[complex, complex, complex]:
    """Values ``(wp(u), wp'(u), zeta(u))``."""
    u = complex(u)
    u0, m, n = reduce_argument(u, ed)
    if abs(u0) < 1e-9:
        raise LatticePoint(f"u = {u} lies on the period lattice")
    wp, dwp, zeta = raw_eval(u0, ed.g2, ed.g3, ed.min_period, _coeff_cache(ed))
    return wp, dwp, zeta + ed.quasi_period(m, n)


_COEFF_CACHE: dict[tuple[complex, complex], list[complex]] = {}


def _coeff_cache(ed: EllipticData) -> list[complex]:
    key = (ed.g2, ed.g3)
    coeffs = _COEFF_CACHE.get(key)
    if coeffs is None:
        coeffs = laurent_coefficients(ed.g2, ed.g3)
        if len(_COEFF_CACHE) > 4096:
            _COEFF_CACHE.clear()
        _COEFF_CACHE[key] = coeffs
    return coeffs


def carlson_rf(x: complex, y: complex, z: complex) -> complex:
    """Carlson's symmetric integral R_F for complex arguments."""
    x, y, z = complex(x), complex(y), complex(z)
    for _ in range(100):
        sx, sy, sz = cmath.sqrt(x), cmath.sqrt(y), cmath.sqrt(z)
        lam = sx * sy + sy * sz + sz * sx
        x, y, z = (x + lam) / 4, (y + lam) / 4, (z + lam) / 4
        mu = (x + y + z) / 3
        dev = max(abs(x - mu), abs(y - mu), abs(z - mu)) / abs(mu)
        if dev < 1e-4:
            break
    mu = (x + y + z) / 3
    X, Y = 1 - x / mu, 1 - y / mu
    Z = -X - Y
    e2 = X * Y - Z * Z
    e3 = X * Y * Z
    return (1 - e2 / 10 + e3 / 14 + e2 * e2 / 24 - 3 * e2 * e3 / 44) / cmath.sqrt(mu)


def abel_map(X: complex, Y: complex, ed: EllipticData, check_tol: float = 1e-8) -> complex:
    """Point ``u`` of the fundamental cell with wp(u) = X and wp'(u) = Y."""
    X, Y = complex(X), complex(Y)
    scale = 1.0 + abs(X) ** 1.5
    if abs(Y * Y - (4 * X ** 3 - ed.g2 * X - ed.g3)) > check_tol * scale ** 2:
        raise OffCurve(f"({X}, {Y}) is not on the Weierstrass cubic")
    e1, e2, e3 = ed.roots
    u = carlson_rf(X - e1, X - e2, X - e3)
    u, _, _ = reduce_argument(u, ed)
    if abs(u) < 1e-12:
        return u
    wp, dwp, _ = weierstrass_eval(u, ed)
    if abs(dwp + Y) < abs(dwp - Y):
        u = -u
    # Newton polish on wp(u) = X away from the branch points
    for _ in range(4):
        wp, dwp, _ = weierstrass_eval(u, ed)
        if abs(dwp) < 1e-6 * scale or abs(wp - X) < 1e-15 * scale:
            break
        u = u - (wp - X) / dwp
    u, _, _ = reduce_argument(u, ed)
    return u


@dataclass(frozen=True)
class WeierstrassReduction:
    """Weierstrass data of a spectral curve with the coordinate maps."""
    base: BasePoint
    data: EllipticData
    forward: Callable[[complex, complex], tuple[complex, complex]]
    inverse: Callable[[complex, complex], tuple[complex, complex]]


def weierstrass_invariants(base: BasePoint) -> tuple[complex, complex]:
    t, H, a = base.t, base.H, base.alpha
    if base.family is FamilyId.PIII3:
        return (4 * H * H - 12 * t) / 3, (4 * H / 27) * (9 * t - 2 * H * H)
    if base.family is FamilyId.PII:
        return (24 * H + t * t) / 12, (t / 216) * (72 * H - t * t) - a * a / 4
    return -4 * t, -4 * H


def reduce_to_weierstrass(base: BasePoint) -> WeierstrassReduction:
    """Weierstrass invariants of the spectral curve plus coordinate maps.

    PIII3 uses X = t x + H/3, Y = 2 t x^2 y; PII uses X = t/12 + (y + x^2)/2,
    Y = x (2X + t/3) - alpha/2 (which reduces to t x/2 + x y + x^3 at alpha = 0);
    PI uses X = x, Y = 2 y.
    """
    g2, g3 = weierstrass_invariants(base)
    data = elliptic_data(g2, g3)
    t, H, a = base.t, base.H, base.alpha
    if base.family is FamilyId.PIII3:
        def fwd(x, y):
            return t * x + H / 3, 2 * t * x * x * y

        def inv(X, Y):
            x = (X - H / 3) / t
            return x, Y / (2 * t * x * x)
    elif base.family is FamilyId.PII:
        def fwd(x, y):
            X = t / 12 + (y + x * x) / 2
            return X, x * (2 * X + t / 3) - a / 2

        def inv(X, Y):
            x = (Y + a / 2) / (2 * X + t / 3)
            return x, 2 * X - t / 6 - x * x
    else:
        def fwd(x, y):
            return x, 2 * y

        def inv(X, Y):
            return X, Y / 2
    return WeierstrassReduction(base, data, fwd, inv)
