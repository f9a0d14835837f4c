"""Complex-arithmetic numerical kernel.

Path quadrature, finite-difference directional derivatives, adaptive
Runge-Kutta integration along complex parameter paths and polynomial roots.
Everything here is a pure function of its inputs.
"""
from __future__ import annotations

import cmath
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import Blowup, DegenerateInput, NonConvergence, StepUnderflow

Singularity = Literal["none", "inverse_sqrt_at_start", "inverse_sqrt_at_end"]

MIN_FD_STEP = 1e-8
DEFAULT_CEILING = 1e8


@dataclass(frozen=True)
class Tolerances:
    quad_rel: float = 1e-10
    ode_rel: float = 1e-10
    fd_step: float = 1e-4
    identity_tol: float = 1e-6

    def __post_init__(self):
        for name in ("quad_rel", "ode_rel", "fd_step", "identity_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.fd_step ** 2 <= np.finfo(float).eps:
            raise ValueError("fd_step**2 must exceed machine epsilon")


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True)
class PathSegment:
    start: complex
    end: complex
    singularity_hint: Singularity = "none"

    def __post_init__(self):
        if self.start == self.end:
            raise ValueError("degenerate path segment")
        if self.singularity_hint not in ("none", "inverse_sqrt_at_start", "inverse_sqrt_at_end"):
            raise ValueError(f"unknown singularity hint {self.singularity_hint!r}")

    def reversed(self) -> "PathSegment":
        flip = {"none": "none",
                "inverse_sqrt_at_start": "inverse_sqrt_at_end",
                "inverse_sqrt_at_end": "inverse_sqrt_at_start"}
        return PathSegment(self.end, self.start, flip[self.singularity_hint])


def polygon(points: Sequence[complex], close: bool = False) -> list[PathSegment]:
    """Chain of straight segments through ``points``."""
    pts = [complex(z) for z in points]
    if close:
        pts.append(pts[0])
    return [PathSegment(a, b) for a, b in zip(pts[:-1], pts[1:])]


def reverse_path(path: Sequence[PathSegment]) -> list[PathSegment]:
    return [seg.reversed() for seg in reversed(path)]


# Gauss-Kronrod 7/15 nodes and weights on [-1, 1]
_XK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327])

_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
_KW = np.concatenate([_WK[:-1], _WK[::-1]])
_GW = np.zeros(15)
_GW[1:7:2] = _WG[:3]
_GW[7] = _WG[3]
_GW[9:14:2] = _WG[2::-1]


def _gk15(g, a, b):
    """Kronrod estimate, error estimate and L1 estimate of g over [a, b]."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    vals = np.array([g(mid + half * x) for x in _NODES], dtype=complex)
    k = half * np.dot(_KW, vals)
    gauss = half * np.dot(_GW, vals)
    l1 = half * np.dot(_KW, np.abs(vals))
    return k, abs(k - gauss), l1


def _segment_integrand(f, seg: PathSegment):
    """Integrand on [0, 1] after the square-root substitution, if any."""
    a, b = seg.start, seg.end
    d = b - a
    if seg.singularity_hint == "inverse_sqrt_at_start":
        return lambda u: f(a + d * u * u) * (2.0 * d * u)
    if seg.singularity_hint == "inverse_sqrt_at_end":
        return lambda u: f(b - d * u * u) * (2.0 * d * u)
    return lambda u: f(a + d * u) * d


def quad_segment(f: Callable[[complex], complex], seg: PathSegment,
                 tol: Tolerances = DEFAULT_TOL, max_intervals: int = 4000) -> complex:
    """Adaptive Gauss-Kronrod integral of ``f`` along one segment."""
    g = _segment_integrand(f, seg)
    val, err, l1 = _gk15(g, 0.0, 1.0)
    counter = itertools.count()
    heap = [(-err, next(counter), 0.0, 1.0, val, err, l1)]
    total, total_err, total_l1 = val, err, l1
    while True:
        scale = max(abs(total), 1e-2 * total_l1)
        if total_err <= tol.quad_rel * scale or total_err < 1e-300:
            return total
        if len(heap) > max_intervals:
            raise NonConvergence(
                f"quadrature did not converge on segment {seg.start}->{seg.end} "
                f"(error estimate {total_err:.3g})")
        _, _, lo, hi, v, e, l = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if mid - lo < 1e-15:
            raise NonConvergence("interval bisection underflow; pole on the path?")
        v1, e1, l1a = _gk15(g, lo, mid)
        v2, e2, l1b = _gk15(g, mid, hi)
        total += v1 + v2 - v
        total_err += e1 + e2 - e
        total_l1 += l1a + l1b - l
        heapq.heappush(heap, (-e1, next(counter), lo, mid, v1, e1, l1a))
        heapq.heappush(heap, (-e2, next(counter), mid, hi, v2, e2, l1b))


def quad_path(f: Callable[[complex], complex], path: Sequence[PathSegment],
              tol: Tolerances = DEFAULT_TOL) -> complex:
    """Integral of ``f(z) dz`` along a chain of segments.

    Segments flagged with an inverse square-root endpoint are integrated in
    the variable ``u`` with ``u**2 = |z - endpoint|`` scaled to the segment,
    which turns the endpoint behaviour into a smooth integrand.
    """
    path = list(path)
    if not path:
        raise DegenerateInput("empty path")
    for s0, s1 in zip(path[:-1], path[1:]):
        if abs(s0.end - s1.start) > 1e-12 * max(1.0, abs(s0.end)):
            raise ValueError("path segments do not join")
    return complex(sum(quad_segment(f, seg, tol) for seg in path))


# Step multipliers balancing roundoff against the h**4 truncation error
# of the extrapolated stencil for each derivative order.
_ORDER_STEP_SCALE = (1.0, 25.0, 60.0, 110.0)


@dataclass(frozen=True)
class FDResult:
    value: complex
    error: float


def fd_derivative(f: Callable, point, directions: Sequence, order: int | None = None,
                  tol: Tolerances = DEFAULT_TOL) -> FDResult:
    """Mixed directional derivative by central differences.

    Computes the derivative of ``f`` at ``point`` once along each entry of
    ``directions`` using the tensor-product central stencil, followed by one
    Richardson extrapolation level.  ``point`` and the directions may be
    scalars or vectors of the same length.
    """
    k = len(directions)
    if order is None:
        order = k
    if order != k or not 1 <= k <= 4:
        raise ValueError("order must equal the number of directions (1..4)")
    scalar = np.isscalar(point)
    x0 = np.asarray(point, dtype=complex)
    dirs = [np.asarray(d, dtype=complex) for d in directions]
    h = tol.fd_step * _ORDER_STEP_SCALE[k - 1]
    if h / 2 < MIN_FD_STEP:
        raise StepUnderflow(f"finite-difference step {h / 2:.3g} below {MIN_FD_STEP}")

    def stencil(step):
        acc = 0j
        for signs in itertools.product((1.0, -1.0), repeat=k):
            shift = sum(s * d for s, d in zip(signs, dirs))
            arg = x0 + step * shift
            val = f(complex(arg) if scalar else arg)
            acc += np.prod(signs) * val
        return acc / (2.0 * step) ** k

    coarse = stencil(h)
    fine = stencil(h / 2)
    value = (4.0 * fine - coarse) / 3.0
    return FDResult(complex(value), float(abs(value - fine)))


def contour_derivative(f: Callable, point, direction=1.0, radius: float = 1e-2,
                       nodes: int = 16) -> complex:
    """First derivative of an analytic ``f`` along ``direction`` by the trapezoid rule on a circle.

    The error decays like ``(radius / R)**nodes`` with ``R`` the distance to
    the nearest singularity, plus roundoff ``~ eps * max|f| / radius``.
    """
    if not radius > 0 or nodes < 4:
        raise ValueError("radius must be positive and nodes >= 4")
    scalar = np.isscalar(point)
    x0 = np.asarray(point, dtype=complex)
    d = np.asarray(direction, dtype=complex)
    acc = 0j
    for k in range(nodes):
        w = radius * cmath.exp(2j * math.pi * k / nodes)
        arg = x0 + w * d
        acc += f(complex(arg) if scalar else arg) / w
    return complex(acc / nodes)


def fd_gradient(f: Callable, point, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Complex gradient of ``f`` in coordinate directions."""
    x0 = np.asarray(point, dtype=complex)
    eye = np.eye(x0.size)
    return np.array([fd_derivative(f, x0, [eye[i]], tol=tol).value for i in range(x0.size)])


# Dormand-Prince 5(4)
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


@dataclass
class OdeSolution:
    """Samples produced by :func:`ode_integrate`."""
    params: np.ndarray
    states: np.ndarray
    n_steps: int = 0
    rejected: int = 0
    notes: list = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1]


def _dp_step(field_fn, tau, y, dtau, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + dtau * sum(a * kk for a, kk in zip(_DP_A[i], ks))
        ks.append(np.asarray(field_fn(tau + _DP_C[i] * dtau, yi), dtype=complex))
    y5 = y + dtau * sum(b * kk for b, kk in zip(_DP_B5, ks))
    y4 = y + dtau * sum(b * kk for b, kk in zip(_DP_B4, ks))
    return y5, y4, ks[-1]


def ode_integrate(field_fn: Callable, y0, param_path: Sequence[complex],
                  tol: Tolerances = DEFAULT_TOL, samples_per_segment: int = 0,
                  ceiling: float = DEFAULT_CEILING, record_steps: bool = True,
                  max_steps: int = 200000, first_step: float | None = None,
                  stop: Callable | None = None,
                  project: Callable | None = None,
                  atol: float | None = None) -> OdeSolution:
    """Integrate ``dy/dtau = field_fn(tau, y)`` along a piecewise-linear path.

    Parameters
    ----------
    field_fn : callable
        ``field_fn(tau, y)`` with complex ``tau`` and complex state vector.
    y0 : array_like
        Initial state at ``param_path[0]``.
    param_path : sequence of complex
        Vertices of the parameter path (at least two).
    samples_per_segment : int
        If positive, equally spaced outputs are hit exactly on each segment.
    ceiling : float
        Max-norm bound on the state; exceeding it raises :class:`Blowup`.
    stop : callable, optional
        ``stop(tau, y)`` returning True ends the integration early after the
        current accepted step.
    atol : float, optional
        Absolute error floor; defaults to ``tol.ode_rel``.
    project : callable, optional
        ``project(tau, y)`` maps each accepted state back onto a constraint
        manifold; the first stage of the next step is then re-evaluated.

    Returns
    -------
    OdeSolution
    """
    verts = [complex(z) for z in param_path]
    if len(verts) < 2:
        raise DegenerateInput("parameter path needs two vertices")
    y = np.array(y0, dtype=complex).ravel()
    rtol = tol.ode_rel
    atol = tol.ode_rel if atol is None else atol
    params = [verts[0]]
    states = [y.copy()]
    n_steps = rejected = 0
    tau = verts[0]
    k1 = np.asarray(field_fn(tau, y), dtype=complex)
    for a, b in zip(verts[:-1], verts[1:]):
        length = abs(b - a)
        if length == 0:
            continue
        direction = (b - a) / length
        targets = []
        if samples_per_segment > 0:
            targets = [length * (j + 1) / samples_per_segment for j in range(samples_per_segment)]
        else:
            targets = [length]
        sigma = 0.0
        h = first_step if first_step else min(length, 1e-2 * max(length, 1.0))
        for target in targets:
            while sigma < target - 1e-14 * length:
                if n_steps + rejected > max_steps:
                    raise Blowup("step budget exhausted", tau, y)
                step = min(h, target - sigma)
                last = step >= target - sigma - 1e-15
                y5, y4, k7 = _dp_step(field_fn, tau, y, step * direction, k1)
                scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
                err = float(np.max(np.abs(y5 - y4) / scale)) if y.size else 0.0
                if not np.isfinite(err):
                    err = np.inf
                if err <= 1.0:
                    sigma = target if last else sigma + step
                    tau = a + direction * sigma
                    y = y5
                    k1 = k7
                    if project is not None:
                        y = np.asarray(project(tau, y), dtype=complex)
                        k1 = np.asarray(field_fn(tau, y), dtype=complex)
                    n_steps += 1
                    if np.max(np.abs(y)) > ceiling:
                        params.append(tau)
                        states.append(y.copy())
                        raise Blowup(f"state exceeded ceiling {ceiling:g} at {tau}", tau, y)
                    if record_steps or (last and samples_per_segment > 0):
                        params.append(tau)
                        states.append(y.copy())
                    if stop is not None and stop(tau, y):
                        return OdeSolution(np.array(params), np.array(states), n_steps, rejected,
                                           ["stopped"])
                    fac = 0.9 * err ** -0.2 if err > 0 else 5.0
                    h = step * min(5.0, max(0.2, fac)) if not last else max(h, step)
                else:
                    rejected += 1
                    h = step * max(0.1, 0.9 * err ** -0.2)
                    if h < 1e-14 * max(1.0, length):
                        raise Blowup(f"step size underflow at {tau}", tau, y)
        if not record_steps and samples_per_segment <= 0:
            params.append(tau)
            states.append(y.copy())
    return OdeSolution(np.array(params), np.array(states), n_steps, rejected)


def poly_eval(coeffs: Sequence[complex], x: complex) -> complex:
    acc = 0j
    for c in coeffs:
        acc = acc * x + c
    return acc


def poly_roots(coeffs: Sequence[complex]) -> list[complex]:
    """All roots (with multiplicity) of a polynomial, highest degree first.

    Companion-matrix eigenvalues are polished by Newton's method on the
    original coefficients.
    """
    c = np.array(coeffs, dtype=complex)
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        raise DegenerateInput("zero polynomial")
    c = c[nz[0]:]
    if len(c) - 1 > 6:
        raise ValueError("degree above 6 is not supported")
    if len(c) == 1:
        return []
    dc = c[:-1] * np.arange(len(c) - 1, 0, -1)
    roots = []
    for z in np.roots(c):
        z = complex(z)
        best, best_res = z, abs(poly_eval(c, z))
        for _ in range(20):
            d = poly_eval(dc, z)
            if d == 0:
                break
            z = z - poly_eval(c, z) / d
            res = abs(poly_eval(c, z))
            if res < best_res:
                best, best_res = z, res
            else:
                break
        roots.append(best)
    return roots
