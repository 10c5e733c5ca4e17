"""Regularized incomplete beta function by Lentz's continued fraction."""
from __future__ import annotations

import math

_TINY = 1e-300
_EPS = 1e-16


def _betacf(a: float, b: float, x: float, max_iter: int) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """``I_x(a, b)``, the regularized incomplete beta function.

    Degenerate parameters follow the limits: ``I_x(0, b) = 1`` and
    ``I_x(a, 0) = 0`` for ``0 < x < 1``.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if a < 0 or b < 0 or (a == 0 and b == 0):
        raise ValueError(f"invalid beta parameters a={a}, b={b}")
    if x == 0.0:
        return 0.0 if a > 0 else 1.0
    if x == 1.0:
        return 1.0 if b > 0 else 0.0
    if a == 0:
        return 1.0
    if b == 0:
        return 0.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    max_iter = 200 + int(10 * math.sqrt(max(a, b)))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x, max_iter) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x, max_iter) / b
