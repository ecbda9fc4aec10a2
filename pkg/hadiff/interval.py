"""
Closed real intervals and boxes of them

Endpoints are computed with the same float primitives used for point
evaluation. Correctly rounded operations (+, -, *, /, sqrt) are monotone under
round-to-nearest, so applying them to endpoints already encloses every
floating-point result; library functions (exp, log, tanh, pow) get one ulp of
outward slack.
"""

import math
from dataclasses import dataclass
from itertools import product
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import IntervalDomainError
from .ops import Op, apply_powi, apply_unary, quiet

_INF = math.inf


def _down(x: float) -> float:
    return math.nextafter(x, -_INF)


def _up(x: float) -> float:
    return math.nextafter(x, _INF)


def _widened(lo: float, hi: float) -> "Interval":
    # inf - inf at an endpoint leaves that side unbounded
    return Interval(-_INF if math.isnan(lo) else lo, _INF if math.isnan(hi) else hi)


def _times(a: float, b: float) -> float:
    # 0 * inf is taken as 0: the infinite endpoint is a limit, not a value
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi]; endpoints may be infinite for internal results."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("Interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"Interval lower bound {lo} exceeds upper bound {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, value: float) -> "Interval":
        return cls(value, value)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        if not self.is_finite:
            raise ValueError("Unbounded interval has no midpoint")
        return self.lo + (self.hi - self.lo) / 2.0

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    @property
    def magnitude(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def contains_zero(self) -> bool:
        return self.lo <= 0.0 <= self.hi

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def as_tuple(self) -> Tuple[float, float]:
        return (self.lo, self.hi)

    def __add__(self, other: "Interval") -> "Interval":
        return _widened(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other: "Interval") -> "Interval":
        return _widened(self.lo - other.hi, self.hi - other.lo)

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other: "Interval") -> "Interval":
        candidates = [
            _times(self.lo, other.lo),
            _times(self.lo, other.hi),
            _times(self.hi, other.lo),
            _times(self.hi, other.hi),
        ]
        return Interval(min(candidates), max(candidates))

    def __truediv__(self, other: "Interval") -> "Interval":
        if other.contains_zero():
            raise IntervalDomainError("division by interval containing 0")
        with quiet():
            candidates = [
                self.lo / other.lo,
                self.lo / other.hi,
                self.hi / other.lo,
                self.hi / other.hi,
            ]
        if any(math.isnan(c) for c in candidates):
            return Interval(-_INF, _INF)
        return Interval(min(candidates), max(candidates))

    def __repr__(self) -> str:
        return f"Interval({self.lo!r}, {self.hi!r})"


def _endpoints(op: Op, interval: Interval) -> Tuple[float, float]:
    with quiet():
        lo, hi = apply_unary(op, np.array([interval.lo, interval.hi]))
    return float(lo), float(hi)


def _increasing(op: Op, x: Interval, floor: float = -_INF, ceil: float = _INF) -> Interval:
    lo, hi = _endpoints(op, x)
    return Interval(max(_down(lo), floor), min(_up(hi), ceil))


def exp(x: Interval) -> Interval:
    return _increasing(Op.EXP, x, floor=0.0)


def log(x: Interval) -> Interval:
    if x.lo <= 0.0:
        raise IntervalDomainError("log of interval with non-positive part")
    return _increasing(Op.LOG, x)


def sqrt(x: Interval) -> Interval:
    if x.lo < 0.0:
        raise IntervalDomainError("sqrt of interval with negative part")
    lo, hi = _endpoints(Op.SQRT, x)
    return Interval(lo, hi)


def tanh(x: Interval) -> Interval:
    return _increasing(Op.TANH, x, floor=-1.0, ceil=1.0)


def sigmoid(x: Interval) -> Interval:
    return _increasing(Op.SIGMOID, x, floor=0.0, ceil=1.0)


def absolute(x: Interval) -> Interval:
    if x.lo >= 0.0:
        return x
    if x.hi <= 0.0:
        return -x
    return Interval(0.0, max(-x.lo, x.hi))


def minimum(a: Interval, b: Interval) -> Interval:
    return Interval(min(a.lo, b.lo), min(a.hi, b.hi))


def maximum(a: Interval, b: Interval) -> Interval:
    return Interval(max(a.lo, b.lo), max(a.hi, b.hi))


def _powi_value(x: float, n: int) -> float:
    with quiet():
        return float(apply_powi(np.array([x]), n)[0])


def power_int(x: Interval, n: int) -> Interval:
    """Exact enclosure of x**n for integer n (even powers tightened at zero)."""
    if n == 0:
        return Interval(1.0, 1.0)
    if n < 0:
        if x.contains_zero():
            raise IntervalDomainError("division by interval containing 0")
        return Interval(1.0, 1.0) / power_int(x, -n)
    lo, hi = _powi_value(x.lo, n), _powi_value(x.hi, n)
    if n % 2 == 1 or x.lo >= 0.0:
        return Interval(lo, hi)
    if x.hi <= 0.0:
        return Interval(hi, lo)
    return Interval(0.0, max(lo, hi))


def power(x: Interval, y: Interval) -> Interval:
    """Enclosure of x**y for a general (non-fast-path) exponent interval.

    For a positive base, x**y is monotone in each argument separately, so the
    extremes sit at the corners of the (x, y) box.
    """
    if x.lo < 0.0:
        raise IntervalDomainError("power with negative base and non-integer exponent")
    if x.lo == 0.0 and y.lo <= 0.0:
        raise IntervalDomainError("power with zero base and non-positive exponent")
    with quiet():
        corners = np.power(np.array([x.lo, x.lo, x.hi, x.hi]), np.array([y.lo, y.hi, y.lo, y.hi]))
    lo, hi = float(np.min(corners)), float(np.max(corners))
    return Interval(max(_down(lo), 0.0), _up(hi))


BoundsLike = Union[Interval, Tuple[float, float], Sequence[float]]


def as_interval(value: BoundsLike) -> Interval:
    if isinstance(value, Interval):
        return value
    lo, hi = value
    return Interval(lo, hi)


class Box(Mapping[str, Interval]):
    """Finite per-variable bounds keyed by variable name, in insertion order."""

    def __init__(self, bounds: Optional[Mapping[str, BoundsLike]] = None):
        self._bounds: Dict[str, Interval] = {}
        for name, value in (bounds or {}).items():
            interval = as_interval(value)
            if not interval.is_finite:
                raise ValueError(f"Bounds for '{name}' must be finite, got {interval}")
            self._bounds[name] = interval

    def __getitem__(self, name: str) -> Interval:
        return self._bounds[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._bounds)

    def __len__(self) -> int:
        return len(self._bounds)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}: [{v.lo:g}, {v.hi:g}]" for k, v in self._bounds.items())
        return f"Box({{{inner}}})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return list(self._bounds.items()) == list(other._bounds.items())

    @property
    def names(self) -> List[str]:
        return list(self._bounds)

    def center(self) -> Dict[str, float]:
        return {name: iv.mid for name, iv in self._bounds.items()}

    def widths(self) -> Dict[str, float]:
        return {name: iv.width for name, iv in self._bounds.items()}

    def bisect(self, name: str) -> Tuple["Box", "Box"]:
        interval = self._bounds[name]
        mid = interval.mid
        left = dict(self._bounds)
        right = dict(self._bounds)
        left[name] = Interval(interval.lo, mid)
        right[name] = Interval(mid, interval.hi)
        return Box(left), Box(right)

    def merge(self, other: Mapping[str, BoundsLike]) -> "Box":
        """Union of the variable sets; entries of ``other`` win on conflicts."""
        merged: Dict[str, BoundsLike] = dict(self._bounds)
        merged.update(other)
        return Box(merged)

    def restrict(self, names: Sequence[str]) -> "Box":
        return Box({name: self._bounds[name] for name in names})

    def contains(self, assignment: Mapping[str, float]) -> bool:
        return all(iv.contains(assignment[name]) for name, iv in self._bounds.items())

    def vertices(self) -> List[Dict[str, float]]:
        names = self.names
        corners = product(*[(self._bounds[n].lo, self._bounds[n].hi) for n in names])
        return [dict(zip(names, corner)) for corner in corners]

    def as_dict(self) -> Dict[str, Tuple[float, float]]:
        return {name: iv.as_tuple() for name, iv in self._bounds.items()}
