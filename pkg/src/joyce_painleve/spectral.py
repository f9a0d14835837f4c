"""Spectral curves y^2 = Q0(x), their cycles, differentials and periods.

Cycles are closed polygons in the x-plane encircling two branch points,
lifted to the curve by continuing y along the polygon from a chosen sheet.
A cycle that also encircles a puncture which is a branch point (PIII3 at
x = 0) is not anti-invariant by itself; its anti-invariant class is the
lift minus its involution image, so it carries weight 2.
"""
from __future__ import annotations

import cmath
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .elliptic import EllipticData, elliptic_data, weierstrass_invariants
from .errors import PoleHit, SingularCurve
from .families import PAIRING, BasePoint, FamilyId, FiberPoint
from .numerics import DEFAULT_TOL, PathSegment, Tolerances, poly_roots, quad_segment

Form = Literal["lambda", "omega", "beta_t_or_s", "beta_alpha", "theta_form"]
FORMS = ("lambda", "omega", "beta_t_or_s", "beta_alpha", "theta_form")


@dataclass(frozen=True)
class CurvePoint:
    x: complex
    y: complex

    def on_curve(self, base: BasePoint, tol: float = 1e-8) -> bool:
        q0 = base.q0(self.x)
        return abs(self.y * self.y - q0) <= tol * max(1.0, abs(q0))


def q1_value(fp: FiberPoint, x: complex) -> complex:
    """Coefficient of 1/epsilon in the oper potential."""
    q, p, r, s = fp.q, fp.p, fp.r, fp.s
    fam = fp.family
    if fam is FamilyId.PIII3:
        return -p * q * q / (x * x * (x - q)) + 2 * p * q * r / (x * x)
    if fam is FamilyId.PII:
        return -p / (x - q) + 2 * p * r - 2 * s * (x - q)
    return -p / (x - q) + 2 * p * r


def q2_value(fp: FiberPoint, x: complex) -> complex:
    """Epsilon-independent term of the oper potential."""
    q, r = fp.q, fp.r
    if fp.family is FamilyId.PIII3:
        return 3 / (4 * (x - q) ** 2) - (x + r * q) / (x * x * (x - q)) + r * r / (x * x)
    return 3 / (4 * (x - q) ** 2) - r / (x - q) + r * r


def differential_coefficient(form: str, ctx, x: complex, y: complex) -> complex:
    """dx-coefficient of a canonical differential at the curve point (x, y)."""
    base = ctx.base if isinstance(ctx, FiberPoint) else ctx
    fam = base.family
    t = base.t
    if form == "lambda":
        return y
    if form == "theta_form":
        if not isinstance(ctx, FiberPoint):
            raise TypeError("theta_form needs a FiberPoint")
        return -q1_value(ctx, x) / (2 * y)
    if form == "omega":
        if fam is FamilyId.PIII3:
            return 1 / (2 * x * x * y)
        if fam is FamilyId.PII:
            return 1 / y
        return 1 / (2 * y)
    if form == "beta_t_or_s":
        if fam is FamilyId.PIII3:
            return t / (2 * x * y)
        if fam is FamilyId.PII:
            return x * x / (2 * y)
        return x / (2 * y)
    if form == "beta_alpha":
        if fam is not FamilyId.PII:
            raise ValueError("beta_alpha exists only for PII")
        return -x / y
    raise ValueError(f"unknown form {form!r}")


def differential_eval(form: str, ctx, pt: CurvePoint) -> complex:
    """Coefficient of ``dx`` of the requested differential at ``pt``.

    Uses the y stored in ``pt``; raises :class:`PoleHit` within 1e-9 of a pole.
    """
    base = ctx.base if isinstance(ctx, FiberPoint) else ctx
    x, y = complex(pt.x), complex(pt.y)
    if form != "lambda" and abs(y) < 1e-9:
        raise PoleHit(f"{form} has a pole at the branch point x = {x}")
    if base.family is FamilyId.PIII3 and abs(x) < 1e-9:
        raise PoleHit("x = 0 is a pole of the PIII3 differentials")
    if form == "theta_form" and abs(x - ctx.q) < 1e-9:
        raise PoleHit("theta has simple poles at (q, +-p)")
    return differential_coefficient(form, ctx, x, y)


@dataclass(frozen=True)
class BranchReport:
    points: tuple[CurvePoint, ...]
    extra: tuple[str, ...]
    min_separation: float


def branch_points(base: BasePoint) -> BranchReport:
    """Finite zeros of Q0 in deterministic order; PIII3 also lists 0 and infinity."""
    if base.family is FamilyId.PIII3:
        if abs(base.t) < 1e-14:
            raise SingularCurve("PIII3 requires t != 0")
        if abs(base.H ** 2 - 4 * base.t) <= 1e-12 * (1 + abs(base.H) ** 2):
            raise SingularCurve("PIII3 requires H^2 - 4t != 0 (coincident branch points)")
    roots = poly_roots(base.branch_polynomial())
    roots = sorted(roots, key=lambda z: (-round(z.real, 12), -round(z.imag, 12)))
    scale = max(1.0, max(abs(r) for r in roots))
    pts = list(roots) + ([0j] if base.family is FamilyId.PIII3 else [])
    sep = min(abs(a - b) for i, a in enumerate(pts) for b in pts[i + 1:])
    if sep < 1e-7 * scale:
        raise SingularCurve(f"{base.family.value}: coincident branch points (separation {sep:.2e})")
    extra = ("0", "infinity") if base.family is FamilyId.PIII3 else ()
    return BranchReport(tuple(CurvePoint(r, 0j) for r in roots), extra, sep)


class SheetTracker:
    """Analytic continuation of y = sqrt(Q0(x)) along a chain of segments."""

    def __init__(self, base: BasePoint, segments: Sequence[PathSegment], y_start: complex,
                 avoid: Sequence[complex] = ()):
        self.base = base
        self.segments = list(segments)
        self.samples: list[tuple[np.ndarray, np.ndarray]] = []
        y = complex(y_start)
        for seg in self.segments:
            length = abs(seg.end - seg.start)
            near = min([abs(seg.start - a) for a in avoid] + [length])
            n = int(min(4000, max(64, 24 * length / max(near, 1e-6))))
            sig = np.linspace(0.0, 1.0, n + 1)
            ys = np.empty(n + 1, dtype=complex)
            for k, s in enumerate(sig):
                x = seg.start + (seg.end - seg.start) * s
                w = cmath.sqrt(base.q0(x))
                if k == 0:
                    w = w if abs(w - y) <= abs(w + y) else -w
                else:
                    ref = ys[k - 1]
                    if k > 1:
                        ref = 2 * ys[k - 1] - ys[k - 2]
                    w = w if abs(w - ref) <= abs(w + ref) else -w
                ys[k] = w
            self.samples.append((sig, ys))
            y = ys[-1]
        self.y_end = y

    def y_at(self, index: int, x: complex) -> complex:
        seg = self.segments[index]
        sig, ys = self.samples[index]
        d = seg.end - seg.start
        s = ((x - seg.start) * d.conjugate()).real / abs(d) ** 2
        k = int(np.clip(round(s * (len(sig) - 1)), 0, len(sig) - 1))
        ref = ys[k]
        if abs(ref) < 1e-12 * (1 + abs(x)) ** 2:
            k = k - 1 if k > 0 else k + 1
            ref = ys[k]
        w = cmath.sqrt(self.base.q0(x))
        return w if (w * ref.conjugate()).real >= 0 else -w


def curve_path_integral(ctx, integrand: Callable[[complex, complex], complex],
                        segments: Sequence[PathSegment], y_start: complex,
                        tol: Tolerances = DEFAULT_TOL, avoid: Sequence[complex] = ()) -> complex:
    """Integral of ``integrand(x, y) dx`` along a lifted path starting at ``y_start``."""
    base = ctx.base if isinstance(ctx, FiberPoint) else ctx
    tracker = SheetTracker(base, segments, y_start, avoid)
    total = 0j
    for i, seg in enumerate(segments):
        total += quad_segment(lambda x, i=i: integrand(x, tracker.y_at(i, x)), seg, tol)
    return total


@dataclass(frozen=True)
class Cycle:
    """A cycle on the spectral curve.

    ``segments`` is a closed polygon in the x-plane, lifted starting from
    ``y_start`` at its first vertex; the homology class is ``weight`` times
    that lift (weight 2 when the loop also surrounds the puncture x = 0).
    ``kind`` is "loop" or "infinity_plus" (the PII loop around the point at
    infinity on the sheet y ~ +x^2).
    """
    label: str
    segments: tuple[PathSegment, ...]
    y_start: complex
    weight: int
    kind: str = "loop"
    encircled: tuple[complex, ...] = ()
    lattice_coeffs: tuple[int, int] = (0, 0)

    def reversed(self) -> "Cycle":
        # a loop around two branch points closes on its starting sheet
        segs = tuple(seg.reversed() for seg in reversed(self.segments))
        return Cycle(self.label, segs, self.y_start, self.weight, self.kind, self.encircled,
                     (-self.lattice_coeffs[0], -self.lattice_coeffs[1]))


def _stadium(a: complex, b: complex, margin: float) -> list[complex]:
    e = (b - a) / abs(b - a)
    n = 1j * e
    return [a - margin * e - margin * n, b + margin * e - margin * n,
            b + margin * e + margin * n, a - margin * e + margin * n]


def _dist_to_segment(z: complex, a: complex, b: complex) -> float:
    d = b - a
    s = ((z - a) * d.conjugate()).real / abs(d) ** 2
    s = min(1.0, max(0.0, s))
    return abs(z - (a + s * d))


def _loop_cycle(base: BasePoint, label: str, a: complex, b: complex, others: Sequence[complex],
                weight: int) -> Cycle:
    length = abs(b - a)
    clearance = min([_dist_to_segment(c, a, b) for c in others] + [length])
    margin = 0.3 * clearance
    verts = _stadium(a, b, margin)
    segs = tuple(PathSegment(verts[i], verts[(i + 1) % 4]) for i in range(4))
    y0 = cmath.sqrt(base.q0(verts[0]))
    return Cycle(label, segs, y0, weight, "loop", (a, b))


def _infinity_cycle(base: BasePoint, roots: Sequence[complex]) -> Cycle:
    radius = 2.0 * max(1.0, max(abs(r) for r in roots)) + 1.0
    n = 32
    # clockwise in x = anticlockwise around infinity
    verts = [radius * cmath.exp(-2j * math.pi * k / n) for k in range(n)]
    segs = tuple(PathSegment(verts[k], verts[(k + 1) % n]) for k in range(n))
    y0 = cmath.sqrt(base.q0(verts[0]))
    if (y0 / verts[0] ** 2).real < 0:
        y0 = -y0
    return Cycle("gamma3", segs, y0, 1, "infinity_plus", ())


def _choose_pairs(points: Sequence[complex], anchor: complex | None = None):
    """Pairs (a, b), (b, c) of branch points whose segments are best separated
    from the remaining points; ``c`` is forced to ``anchor`` when given."""
    best = None
    for a, b, c in itertools.permutations(points, 3):
        if anchor is not None and (c != anchor or a == anchor or b == anchor):
            continue
        score = min(_clear((a, b), points), _clear((b, c), points))
        if best is None or score > best[0] + 1e-12:
            best = (score, (a, b), (b, c))
    return best[1], best[2]


def _clear(pair, points) -> float:
    a, b = pair
    others = [c for c in points if c != a and c != b]
    d = min([_dist_to_segment(c, a, b) for c in others] + [abs(b - a)])
    return d / abs(b - a)


def cycle_basis(base: BasePoint, tol: Tolerances = DEFAULT_TOL) -> tuple[Cycle, ...]:
    """Cycle representatives with the family's pairing normalization.

    The pair is oriented so the omega/beta bilinear value is +2 pi i times
    the pairing (4 pi i for PIII3, 2 pi i for PI and PII).
    """
    base.check_regular()
    report = branch_points(base)
    roots = [pt.x for pt in report.points]
    fam = base.family
    if fam is FamilyId.PIII3:
        pts = roots + [0j]
        pa, pb = _choose_pairs(pts, anchor=0j)
        g1 = _loop_cycle(base, "gamma1", pa[0], pa[1], [c for c in pts if c not in pa], 1)
        g2 = _loop_cycle(base, "gamma2", pb[0], pb[1], [c for c in pts if c not in pb], 2)
        cycles = [g1, g2]
    else:
        pa, pb = _choose_pairs(roots)
        g1 = _loop_cycle(base, "gamma1", pa[0], pa[1], [c for c in roots if c not in pa], 1)
        g2 = _loop_cycle(base, "gamma2", pb[0], pb[1], [c for c in roots if c not in pb], 1)
        cycles = [g1, g2]
    coarse = Tolerances(quad_rel=1e-8)
    om = [period("omega", c, base, method="quadrature", tol=coarse) for c in cycles]
    be = [period("beta_t_or_s", c, base, method="quadrature", tol=coarse) for c in cycles]
    pairing = om[0] * be[1] - om[1] * be[0]
    target = 2j * math.pi * PAIRING[fam]
    if abs(pairing + target) < abs(pairing - target):
        cycles[1] = cycles[1].reversed()
        om[1] = -om[1]
    ed = curve_elliptic_data(base)
    for i, c in enumerate(cycles):
        cycles[i] = _with_lattice(c, om[i], ed)
    if fam is FamilyId.PII:
        cycles.append(_infinity_cycle(base, roots))
    return tuple(cycles)


def _with_lattice(c: Cycle, omega_period: complex, ed: EllipticData) -> Cycle:
    w1, w2 = ed.periods
    m, n = ed.lattice_coords(omega_period)
    mi, ni = round(m), round(n)
    if abs(m - mi) > 1e-4 or abs(n - ni) > 1e-4:
        raise SingularCurve("cycle period is not a lattice vector; sheet bookkeeping failed")
    return Cycle(c.label, c.segments, c.y_start, c.weight, c.kind, c.encircled, (mi, ni))


def curve_elliptic_data(base: BasePoint) -> EllipticData:
    return elliptic_data(*weierstrass_invariants(base))


def _quadrature_period(form: str, cycle: Cycle, ctx, tol: Tolerances) -> complex:
    avoid = list(cycle.encircled)
    val = curve_path_integral(
        ctx, lambda x, y: differential_coefficient(form, ctx, x, y),
        cycle.segments, cycle.y_start, tol, avoid)
    return cycle.weight * val


def _elliptic_period(form: str, cycle: Cycle, base: BasePoint, ed: EllipticData) -> complex:
    fam = base.family
    if cycle.kind == "infinity_plus":
        if form == "beta_alpha":
            return 2j * math.pi
        if form == "lambda":
            return 2j * math.pi * base.alpha
        return 0j
    m, n = cycle.lattice_coeffs
    w = 2 * m * ed.half_period_1 + 2 * n * ed.half_period_2
    eta = 2 * m * ed.eta_1 + 2 * n * ed.eta_2  # increment of zeta along the cycle
    if form == "omega":
        return w
    if form == "beta_t_or_s":
        # beta = (wp - H/3) du (PIII3), (wp - t/12) du - dx/2 (PII), wp du (PI)
        if fam is FamilyId.PIII3:
            return -eta - base.H / 3 * w
        if fam is FamilyId.PII:
            return -eta - base.t / 12 * w
        return -eta
    if form == "lambda":
        b = _elliptic_period("beta_t_or_s", cycle, base, ed)
        if fam is FamilyId.PIII3:
            return 4 * b + 2 * base.H * w
        if fam is FamilyId.PII:
            if base.alpha != 0:
                raise NotImplementedError("lambda fast path requires alpha = 0")
            return 2 * base.t / 3 * b + 4 * base.H / 3 * w
        return 4 * base.t / 5 * b + 6 * base.H / 5 * w
    raise ValueError(f"no elliptic fast path for {form}")


def period(form: str, cycle: Cycle, ctx, method: str = "auto",
           tol: Tolerances = DEFAULT_TOL, ed: EllipticData | None = None) -> complex:
    """Period of a differential over a cycle.

    ``method`` is "elliptic" (lattice data), "quadrature" (contour integral)
    or "auto" (elliptic when available, else quadrature).
    """
    base = ctx.base if isinstance(ctx, FiberPoint) else ctx
    if method in ("auto", "elliptic") and form != "theta_form" and not (
            form == "beta_alpha" and cycle.kind != "infinity_plus") and not (
            form == "lambda" and base.family is FamilyId.PII and base.alpha != 0
            and cycle.kind != "infinity_plus"):
        if ed is None:
            ed = curve_elliptic_data(base)
        return _elliptic_period(form, cycle, base, ed)
    if method == "elliptic":
        raise ValueError(f"no elliptic fast path for {form}")
    return _quadrature_period(form, cycle, ctx, tol)


def bilinear_pairing(form_a: str, form_b: str, cycles: Sequence[Cycle], ctx,
                     method: str = "auto", tol: Tolerances = DEFAULT_TOL) -> complex:
    """A_1 B_2 - A_2 B_1 over the first two cycles."""
    a = [period(form_a, c, ctx, method, tol) for c in cycles[:2]]
    b = [period(form_b, c, ctx, method, tol) for c in cycles[:2]]
    return a[0] * b[1] - a[1] * b[0]


def z_coords(base: BasePoint, cycles: Sequence[Cycle] | None = None, method: str = "auto",
             tol: Tolerances = DEFAULT_TOL) -> tuple[complex, ...]:
    """Periods of lambda over the cycle basis; PII z3 = 2 pi i alpha exactly."""
    if cycles is None:
        cycles = cycle_basis(base, tol)
    out = [period("lambda", c, base, method, tol) for c in cycles[:2]]
    if base.family is FamilyId.PII:
        out.append(2j * math.pi * base.alpha)
    return tuple(out)


def period_matrix(base: BasePoint, cycles: Sequence[Cycle], method: str = "auto",
                  tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Rows (beta_i, omega_i) over the first two cycles."""
    ed = curve_elliptic_data(base) if method != "quadrature" else None
    return np.array([[period("beta_t_or_s", c, base, method, tol, ed),
                      period("omega", c, base, method, tol, ed)] for c in cycles[:2]])


def continue_lattice(reference: np.ndarray, candidate: np.ndarray,
                     tol: float = 1e-3) -> np.ndarray:
    """Integer change of basis mapping ``candidate`` rows closest to ``reference``.

    Both arguments are 2-vectors of complex periods (one per cycle).  The
    candidate basis is re-expressed so that it continues the reference one.
    """
    ref = np.asarray(reference, dtype=complex)
    cand = np.asarray(candidate, dtype=complex)
    # real 2x2 system: ref_i = sum_j M_ij cand_j
    A = np.array([[cand[0].real, cand[1].real], [cand[0].imag, cand[1].imag]])
    out = np.zeros((2, 2))
    for i in range(2):
        out[i] = np.linalg.solve(A, [ref[i].real, ref[i].imag])
    M = np.rint(out)
    if np.max(np.abs(out - M)) > 0.25:
        raise SingularCurve("lattice continuation failed; step too large")
    return M
