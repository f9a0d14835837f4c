"""Seeded random sample points kept away from the discriminant and the branch points."""
from __future__ import annotations

import numpy as np

from .families import BasePoint, FamilyId, FiberPoint

_MARGIN = 0.1


def _uniform_complex(rng: np.random.Generator, radius: float) -> complex:
    return complex(*rng.uniform(-radius, radius, 2))


def random_base(family, rng: np.random.Generator, joyce: bool = False,
                radius: float = 1.5) -> BasePoint:
    """A random regular base point.

    ``joyce=True`` forces ``alpha = 0`` for PII (the Joyce-structure slice).
    """
    family = FamilyId.parse(family)
    while True:
        t, H = _uniform_complex(rng, radius), _uniform_complex(rng, radius)
        alpha = 0j
        if family is FamilyId.PII and not joyce:
            alpha = _uniform_complex(rng, 0.5)
        if family is FamilyId.PIII3 and abs(t) < 0.3:
            continue
        base = BasePoint(family, t, H, alpha)
        if min(abs(v) for v in base.discriminant_factors().values()) > _MARGIN:
            return base


def random_fiber(base: BasePoint, rng: np.random.Generator, r_radius: float = 1.0,
                 s_radius: float = 0.0, epsilon: complex = 1 + 0j) -> FiberPoint:
    """A random fiber point with ``q`` away from the branch points and the puncture."""
    roots = np.roots(base.branch_polynomial())
    while True:
        q = _uniform_complex(rng, 2.0)
        if base.family is FamilyId.PIII3 and abs(q) < 0.3:
            continue
        if len(roots) and np.min(np.abs(roots - q)) < 0.15:
            continue
        r = _uniform_complex(rng, r_radius) if r_radius else 0j
        s = _uniform_complex(rng, s_radius) if s_radius and base.family is FamilyId.PII else 0j
        return FiberPoint.on_sheet(base, q, r, s, epsilon, sheet=int(rng.choice([1, -1])))
