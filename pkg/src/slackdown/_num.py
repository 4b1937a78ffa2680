"""Exact-number helpers shared by the model, engine and I/O layers."""

from __future__ import annotations

from decimal import Decimal
from fractions import Fraction
from numbers import Rational


def frac(x) -> Fraction:
    """Convert to an exact Fraction.

    Floats go through their shortest repr so that ``0.1`` means one tenth,
    which is what a user typing a decimal on the command line intends.
    """
    if isinstance(x, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    if isinstance(x, Decimal):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x.strip())
    raise TypeError(f"cannot convert {x!r} to an exact number")


def fmt(x, places: int = 6) -> str:
    """Fixed-point decimal string, rounded half-even from the exact value."""
    q = round(frac(x), places)
    if q == 0:
        q = Fraction(0)
    sign = "-" if q < 0 else ""
    q = abs(q)
    scaled = q.numerator * 10**places // q.denominator
    whole, part = divmod(scaled, 10**places)
    if places == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{part:0{places}d}"


def short(x) -> str:
    """Compact decimal for labels and config echo: 2.4, 500, 0.125."""
    x = frac(x)
    if x.denominator == 1:
        return str(x.numerator)
    d = Decimal(x.numerator) / Decimal(x.denominator)
    return format(d.normalize(), "f")
