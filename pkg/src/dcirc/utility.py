"""Linear and exponential utility functions normalized into (0, 1).

An exponential utility ``u(v) = -u0 * exp(-gamma * v) + uinf`` and a linear
utility ``u(v) = u0 * v + uinf`` are the only two families supported; both
satisfy the delta property, so certain-equivalent differences are prices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import NormalizationError, UnsupportedParameterError

LINEAR = "linear"
EXPONENTIAL = "exponential"

NORMALIZATION_MARGIN = 1e-3
ROUND_TRIP_TOL = 1e-9


@dataclass(frozen=True)
class UtilitySpec:
    """Utility function as declared in a diagram document.

    ``u0``/``uinf`` may be left as ``None``; they are then derived from the
    value-table range when the diagram is built (see :meth:`resolve`).
    """

    kind: str
    risk_aversion: float | None = None
    u0: float | None = None
    uinf: float | None = None

    def resolve(self, values: Iterable[float]) -> "UtilityFunction":
        return UtilityFunction.fit(self, values)

    def to_document(self) -> dict:
        doc: dict = {"type": self.kind}
        if self.kind == EXPONENTIAL:
            doc["risk_aversion"] = self.risk_aversion
        if self.u0 is not None:
            doc["u0"] = self.u0
            doc["uinf"] = self.uinf
        return doc


@dataclass(frozen=True)
class UtilityFunction:
    """A fully parameterized utility function."""

    kind: str
    gamma: float
    u0: float
    uinf: float

    @classmethod
    def fit(cls, spec: UtilitySpec, values: Iterable[float]) -> "UtilityFunction":
        values = [float(v) for v in values]
        if not values:
            raise NormalizationError("value table is empty")
        gamma = float(spec.risk_aversion) if spec.kind == EXPONENTIAL else 0.0
        try:
            if spec.u0 is not None:
                fn = cls(spec.kind, gamma, float(spec.u0), float(spec.uinf))
            else:
                fn = cls._auto(spec.kind, gamma, min(values), max(values))
            fn.check(values)
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            if isinstance(exc, NormalizationError):
                raise
            raise NormalizationError(f"utility cannot be normalized over the value table: {exc}") from None
        return fn

    @classmethod
    def _auto(cls, kind: str, gamma: float, vmin: float, vmax: float) -> "UtilityFunction":
        eps = NORMALIZATION_MARGIN
        if vmin == vmax:
            # any monotone map will do; pin u(v) = 0.5
            if kind == EXPONENTIAL:
                return cls(kind, gamma, 0.25 * math.exp(gamma * vmin), 0.75)
            return cls(kind, gamma, 1.0, 0.5 - vmin)
        if kind == EXPONENTIAL:
            # u(vmin) = eps, u(vmax) = 1 - eps
            spread = -math.expm1(-gamma * (vmax - vmin)) * math.exp(-gamma * vmin)
            u0 = (1.0 - 2.0 * eps) / spread
            return cls(kind, gamma, u0, eps + u0 * math.exp(-gamma * vmin))
        u0 = (1.0 - 2.0 * eps) / (vmax - vmin)
        return cls(kind, gamma, u0, eps - u0 * vmin)

    def check(self, values: Sequence[float]) -> None:
        if not self.u0 > 0:
            raise NormalizationError(f"u0 must be positive, got {self.u0}")
        if self.kind == EXPONENTIAL and not self.gamma > 0:
            raise NormalizationError(f"risk aversion must be positive, got {self.gamma}")
        for v in values:
            w = self(v)
            if not 0.0 < w < 1.0:
                raise NormalizationError(f"u({v}) = {w} lies outside (0, 1)")
            back = self.inverse(w)
            if abs(back - v) >= ROUND_TRIP_TOL * max(1.0, abs(v)):
                raise NormalizationError(f"u^-1(u({v})) = {back}: utility is numerically degenerate")

    @property
    def is_exponential(self) -> bool:
        return self.kind == EXPONENTIAL

    def __call__(self, v: float) -> float:
        if self.kind == EXPONENTIAL:
            return self.uinf - self.u0 * math.exp(-self.gamma * v)
        return self.u0 * v + self.uinf

    def inverse(self, w: float) -> float:
        if self.kind == EXPONENTIAL:
            return -math.log((self.uinf - w) / self.u0) / self.gamma
        return (w - self.uinf) / self.u0

    def inverse_slope(self, w: float) -> float:
        """d u^-1 / d w at utility ``w``."""
        if self.kind == EXPONENTIAL:
            return 1.0 / (self.gamma * (self.uinf - w))
        return 1.0 / self.u0

    def du_dparam(self, name: str, v: float) -> float:
        """Partial derivative of u(v) with respect to one of its parameters."""
        if name == "uinf":
            return 1.0
        if self.kind == EXPONENTIAL:
            if name == "u0":
                return -math.exp(-self.gamma * v)
            if name == "gamma":
                return self.u0 * v * math.exp(-self.gamma * v)
        elif name == "u0":
            return v
        raise UnsupportedParameterError(f"{self.kind} utility has no parameter {name!r}")

    def dinverse_dparam(self, name: str, w: float) -> float:
        """Partial derivative of u^-1(w) with respect to a parameter, w held fixed."""
        if self.kind == EXPONENTIAL:
            if name == "uinf":
                return -1.0 / (self.gamma * (self.uinf - w))
            if name == "u0":
                return 1.0 / (self.gamma * self.u0)
            if name == "gamma":
                return -self.inverse(w) / self.gamma
        else:
            if name == "uinf":
                return -1.0 / self.u0
            if name == "u0":
                return -(w - self.uinf) / self.u0**2
        raise UnsupportedParameterError(f"{self.kind} utility has no parameter {name!r}")

    def local_risk_aversion(self, v: float) -> float:
        return self.gamma if self.kind == EXPONENTIAL else 0.0


def local_risk_aversion(spec: UtilitySpec | UtilityFunction, v: float) -> float:
    """-u''(v)/u'(v): constant gamma for exponential utility, zero for linear."""
    if spec.kind == EXPONENTIAL:
        return float(spec.gamma if isinstance(spec, UtilityFunction) else spec.risk_aversion)
    return 0.0
