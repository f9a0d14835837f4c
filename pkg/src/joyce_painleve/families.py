"""Family tags, base points and the quadratic differentials Q0."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import SingularCurve


class FamilyId(str, Enum):
    PI = "PI"
    PII = "PII"
    PIII3 = "PIII3"

    @classmethod
    def parse(cls, value) -> "FamilyId":
        if isinstance(value, FamilyId):
            return value
        key = str(value).upper().replace("_", "")
        aliases = {"PI": cls.PI, "P1": cls.PI, "PII": cls.PII, "P2": cls.PII,
                   "PIII3": cls.PIII3, "PIII": cls.PIII3, "P3": cls.PIII3}
        if key not in aliases:
            raise ValueError(f"unknown family {value!r}")
        return aliases[key]


# Skew pairing of the two cycles spanning the z-plane, per family
PAIRING = {FamilyId.PI: 1, FamilyId.PII: 1, FamilyId.PIII3: 2}


@dataclass(frozen=True)
class BasePoint:
    """A point of the base: family, times ``t`` and ``H`` and PII residue ``alpha``."""
    family: FamilyId
    t: complex
    H: complex
    alpha: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "family", FamilyId.parse(self.family))
        object.__setattr__(self, "t", complex(self.t))
        object.__setattr__(self, "H", complex(self.H))
        object.__setattr__(self, "alpha", complex(self.alpha))
        if self.family is not FamilyId.PII and self.alpha != 0:
            raise ValueError("alpha is only meaningful for PII")

    def with_(self, **changes) -> "BasePoint":
        return replace(self, **changes)

    @property
    def s(self) -> complex:
        """Logarithmic time used as base coordinate for PIII3."""
        return complex(np.log(self.t))

    def q0(self, x: complex) -> complex:
        t, H = self.t, self.H
        if self.family is FamilyId.PI:
            return x ** 3 + t * x + H
        if self.family is FamilyId.PII:
            return x ** 4 + t * x ** 2 - 2 * self.alpha * x + 2 * H
        return t / x + H / x ** 2 + 1 / x ** 3

    def dq0(self, x: complex) -> complex:
        t, H = self.t, self.H
        if self.family is FamilyId.PI:
            return 3 * x ** 2 + t
        if self.family is FamilyId.PII:
            return 4 * x ** 3 + 2 * t * x - 2 * self.alpha
        return -t / x ** 2 - 2 * H / x ** 3 - 3 / x ** 4

    def branch_polynomial(self) -> list[complex]:
        """Coefficients (highest first) whose roots are the finite branch points."""
        t, H = self.t, self.H
        if self.family is FamilyId.PI:
            return [1, 0, t, H]
        if self.family is FamilyId.PII:
            return [1, 0, t, -2 * self.alpha, 2 * H]
        # x**3 Q0 = t x**2 + H x + 1, plus branch points at 0 and infinity
        return [t, H, 1]

    def discriminant_factors(self) -> dict[str, complex]:
        """Named factors whose vanishing makes the base irregular."""
        t, H, a = self.t, self.H, self.alpha
        if self.family is FamilyId.PI:
            return {"4t^3+27H^2": 4 * t ** 3 + 27 * H ** 2}
        if self.family is FamilyId.PIII3:
            return {"t": t, "H^2-4t": H ** 2 - 4 * t}
        out = {"quartic discriminant": quartic_discriminant(1, 0, t, -2 * a, 2 * H)}
        if a == 0:
            out.update({"H": H, "t^2-8H": t ** 2 - 8 * H})
        return out

    def check_regular(self, tol: float = 1e-12) -> None:
        scale = 1.0 + abs(self.t) ** 3 + abs(self.H) ** 2
        for name, val in self.discriminant_factors().items():
            if abs(val) <= tol * scale:
                raise SingularCurve(f"{self.family.value} base is singular: {name} = 0")

    def is_regular(self) -> bool:
        try:
            self.check_regular()
        except SingularCurve:
            return False
        return True


def quartic_discriminant(a, b, c, d, e) -> complex:
    return (256 * a ** 3 * e ** 3 - 192 * a ** 2 * b * d * e ** 2 - 128 * a ** 2 * c ** 2 * e ** 2
            + 144 * a ** 2 * c * d ** 2 * e - 27 * a ** 2 * d ** 4 + 144 * a * b ** 2 * c * e ** 2
            - 6 * a * b ** 2 * d ** 2 * e - 80 * a * b * c ** 2 * d * e + 18 * a * b * c * d ** 3
            + 16 * a * c ** 4 * e - 4 * a * c ** 3 * d ** 2 - 27 * b ** 4 * e ** 2
            + 18 * b ** 3 * c * d * e - 4 * b ** 3 * d ** 3 - 4 * b ** 2 * c ** 3 * e
            + b ** 2 * c ** 2 * d ** 2)


@dataclass(frozen=True)
class FiberPoint:
    """A fiber point ``(q, p, r, s)`` over a base point, with deformation ``epsilon``.

    ``p`` carries the sheet: it must satisfy ``p**2 = Q0(q)``.
    """
    base: BasePoint
    q: complex
    p: complex
    r: complex = 0j
    s: complex = 0j
    epsilon: complex = 1 + 0j

    def __post_init__(self):
        for name in ("q", "p", "r", "s", "epsilon"):
            object.__setattr__(self, name, complex(getattr(self, name)))
        if self.epsilon == 0:
            raise ValueError("epsilon must be nonzero")
        if self.base.family is not FamilyId.PII and self.s != 0:
            raise ValueError("s is only meaningful for PII")
        q0 = self.base.q0(self.q)
        if abs(self.p * self.p - q0) > 1e-10 * max(1.0, abs(q0)):
            raise ValueError(f"p^2 = {self.p * self.p} differs from Q0(q) = {q0}")

    @classmethod
    def on_sheet(cls, base: BasePoint, q: complex, r: complex = 0j, s: complex = 0j,
                 epsilon: complex = 1 + 0j, sheet: int = 1) -> "FiberPoint":
        p = np.sqrt(complex(base.q0(complex(q))))
        return cls(base, q, sheet * p, r, s, epsilon)

    @property
    def family(self) -> FamilyId:
        return self.base.family

    @property
    def t(self) -> complex:
        return self.base.t

    @property
    def H(self) -> complex:
        return self.base.H

    @property
    def alpha(self) -> complex:
        return self.base.alpha

    def with_(self, **changes) -> "FiberPoint":
        base_keys = {"t", "H", "alpha"}
        base_changes = {k: changes.pop(k) for k in list(changes) if k in base_keys}
        base = self.base.with_(**base_changes) if base_changes else self.base
        return replace(self, base=base, **changes)

    def sigma(self) -> "FiberPoint":
        """Image under the covering involution (p -> -p)."""
        return replace(self, p=-self.p)
