"""Exact number support.

Everything upstream of payment integration is exact.  Rationals are
``gmpy2.mpq``; the canonical mechanism parameters live in real quadratic
fields, so :class:`QSurd` represents ``a + b*sqrt(d)`` with rational ``a``,
``b`` and a square-free integer ``d``.  Arithmetic that cancels the surd part
collapses back to ``mpq``, which keeps the common path fast.
"""

from __future__ import annotations

import re

from decimal import Decimal, InvalidOperation
from math import isqrt

import gmpy2
import mpmath
from gmpy2 import mpq

__all__ = [
    "QSurd",
    "mpq",
    "as_rational",
    "parse_rational",
    "format_number",
    "parse_number",
    "sqrt_rational",
    "to_mpf",
    "rational_approx",
    "rational_between",
    "is_number",
]

_APPROX_BITS = 160


def _squarefree_split(n: int) -> tuple[int, int]:
    """Return ``(s, d)`` with ``n == s*s*d`` and ``d`` square-free."""
    s, d = 1, 1
    p = 2
    while p * p <= n:
        while n % (p * p) == 0:
            n //= p * p
            s *= p
        if n % p == 0:
            n //= p
            d *= p
        p += 1
    return s, d * n


class QSurd:
    """The number ``a + b*sqrt(d)``; ``b != 0`` and ``d > 1`` square-free."""

    __slots__ = ("a", "b", "d")

    def __init__(self, a, b, d: int):
        self.a = mpq(a)
        self.b = mpq(b)
        self.d = int(d)

    @staticmethod
    def make(a, b, d: int):
        b = mpq(b)
        if b == 0 or d == 1:
            return mpq(a) + (b if d == 1 else 0)
        return QSurd(a, b, d)

    # coercion -----------------------------------------------------------
    def _parts(self, other):
        if isinstance(other, QSurd):
            if other.d != self.d:
                raise ValueError(f"mixing sqrt({self.d}) and sqrt({other.d})")
            return other.a, other.b
        return mpq(other), 0

    def __add__(self, other):
        if not is_number(other):
            return NotImplemented
        a, b = self._parts(other)
        return QSurd.make(self.a + a, self.b + b, self.d)

    __radd__ = __add__

    def __sub__(self, other):
        if not is_number(other):
            return NotImplemented
        a, b = self._parts(other)
        return QSurd.make(self.a - a, self.b - b, self.d)

    def __rsub__(self, other):
        if not is_number(other):
            return NotImplemented
        a, b = self._parts(other)
        return QSurd.make(a - self.a, b - self.b, self.d)

    def __mul__(self, other):
        if not is_number(other):
            return NotImplemented
        a, b = self._parts(other)
        return QSurd.make(
            self.a * a + self.d * self.b * b, self.a * b + self.b * a, self.d
        )

    __rmul__ = __mul__

    def _inverse(self):
        norm = self.a * self.a - self.d * self.b * self.b
        return QSurd(self.a / norm, -self.b / norm, self.d)

    def __truediv__(self, other):
        if not is_number(other):
            return NotImplemented
        if isinstance(other, QSurd):
            return self * other._inverse()
        return QSurd.make(self.a / other, self.b / other, self.d)

    def __rtruediv__(self, other):
        if not is_number(other):
            return NotImplemented
        return self._inverse() * other

    def __neg__(self):
        return QSurd(-self.a, -self.b, self.d)

    def __pos__(self):
        return self

    def __abs__(self):
        return -self if self.sign() < 0 else self

    def sign(self) -> int:
        a, b = self.a, self.b
        sa = (a > 0) - (a < 0)
        sb = (b > 0) - (b < 0)
        if sa == 0:
            return sb
        if sa == sb:
            return sa
        # opposite signs: compare a^2 with d b^2
        lhs, rhs = a * a, self.d * b * b
        if lhs > rhs:
            return sa
        return sb

    def _cmp(self, other) -> int:
        diff = self - other
        if isinstance(diff, QSurd):
            return diff.sign()
        return (diff > 0) - (diff < 0)

    def __eq__(self, other):
        if not is_number(other):
            return NotImplemented
        if isinstance(other, QSurd):
            return (self.a, self.b, self.d) == (other.a, other.b, other.d)
        return False  # b != 0 means irrational

    def __ne__(self, other):
        eq = self.__eq__(other)
        return eq if eq is NotImplemented else not eq

    def __lt__(self, other):
        if not is_number(other):
            return NotImplemented
        return self._cmp(other) < 0

    def __le__(self, other):
        if not is_number(other):
            return NotImplemented
        return self._cmp(other) <= 0

    def __gt__(self, other):
        if not is_number(other):
            return NotImplemented
        return self._cmp(other) > 0

    def __ge__(self, other):
        if not is_number(other):
            return NotImplemented
        return self._cmp(other) >= 0

    def __hash__(self):
        return hash((self.a, self.b, self.d))

    def __float__(self):
        return float(to_mpf(self))

    def __repr__(self):
        return f"QSurd({self.a}, {self.b}, {self.d})"

    def __str__(self):
        return format_number(self)


_MPQ = type(mpq(0))
_MPZ = type(gmpy2.mpz(0))


def is_number(x) -> bool:
    return isinstance(x, (QSurd, int, _MPQ, _MPZ))


def as_rational(x) -> mpq:
    """Coerce ints, mpq, Fraction and decimal/`p/q` strings to ``mpq``."""
    if isinstance(x, str):
        return parse_rational(x)
    if isinstance(x, float):
        n, d = Decimal(repr(x)).as_integer_ratio()
        return mpq(n, d)
    if isinstance(x, QSurd):
        raise TypeError(f"{x!r} is irrational")
    return mpq(x)


def parse_rational(text: str) -> mpq:
    s = text.strip()
    if not s:
        raise ValueError("empty rational")
    if "/" in s:
        num, _, den = s.partition("/")
        q = mpq(int(num.strip()), int(den.strip()))
        return q
    try:
        n, d = Decimal(s).as_integer_ratio()
    except (InvalidOperation, ValueError, OverflowError) as exc:
        raise ValueError(f"not a rational: {text!r}") from exc
    return mpq(n, d)


def _format_rational(q) -> str:
    q = mpq(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def format_number(x) -> str:
    """``p/q`` for rationals, ``a+b*sqrt(d)`` for surds."""
    if isinstance(x, QSurd):
        a = _format_rational(x.a)
        sign = "-" if x.b < 0 else "+"
        b = _format_rational(abs(x.b))
        return f"{a}{sign}{b}*sqrt({x.d})"
    return _format_rational(x)


_SURD = re.compile(r"(-?[0-9./]+)?([+-])?(?:([0-9./]+)\*)?sqrt\(([0-9]+)\)")


def parse_number(text: str):
    s = text.strip()
    if "sqrt" in s:
        m = _SURD.fullmatch(s.replace(" ", ""))
        if m is None:
            raise ValueError(f"not a number: {text!r}")
        head, sign, coef, root = m.groups()
        b = parse_rational(coef) if coef else mpq(1)
        return QSurd.make(parse_rational(head) if head else mpq(0), -b if sign == "-" else b, int(root))
    return parse_rational(s)


def sqrt_rational(q) -> mpq | QSurd:
    """Exact square root of a non-negative rational."""
    q = mpq(q)
    if q < 0:
        raise ValueError("negative radicand")
    if q == 0:
        return mpq(0)
    num, den = int(q.numerator), int(q.denominator)
    # sqrt(n/m) = sqrt(n*m)/m
    s, d = _squarefree_split(num * den)
    return QSurd.make(0, mpq(s, den), d)


def to_mpf(x):
    """Convert to an ``mpmath.mpf`` at the current working precision."""
    if isinstance(x, QSurd):
        return to_mpf(x.a) + to_mpf(x.b) * mpmath.sqrt(x.d)
    q = mpq(x)
    return mpmath.mpf(int(q.numerator)) / int(q.denominator)


def rational_approx(x, bits: int = _APPROX_BITS) -> mpq:
    """A rational within ``2**-bits * (1 + |b|)`` of ``x``."""
    if not isinstance(x, QSurd):
        return mpq(x)
    scale = 1 << bits
    root = mpq(isqrt(x.d * scale * scale), scale)
    return x.a + x.b * root


def rational_between(lo, hi, frac=mpq(1, 2)) -> mpq:
    """A rational strictly inside ``(lo, hi)`` near ``lo + frac*(hi-lo)``."""
    if not lo < hi:
        raise ValueError("empty interval")
    bits = _APPROX_BITS
    while True:
        lo_q, hi_q = rational_approx(lo, bits), rational_approx(hi, bits)
        r = lo_q + frac * (hi_q - lo_q)
        if lo < r < hi:
            return r
        bits *= 2
        if bits > 1 << 14:
            raise ArithmeticError("cannot separate interval endpoints")
