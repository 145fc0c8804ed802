"""Wigner 3j and Clebsch-Gordan coefficients from the Racah formula."""

from __future__ import annotations

from functools import lru_cache
from math import factorial, sqrt


def _is_int(x: float) -> bool:
    return abs(x - round(x)) < 1e-9


def _twice(x: float) -> int:
    t = 2 * x
    if not _is_int(t):
        raise ValueError(f"{x} is not a half-integer")
    return int(round(t))


def _delta(a2: int, b2: int, c2: int) -> float:
    # triangle coefficient, arguments given as twice the angular momenta
    return (
        factorial((a2 + b2 - c2) // 2)
        * factorial((a2 - b2 + c2) // 2)
        * factorial((-a2 + b2 + c2) // 2)
        / factorial((a2 + b2 + c2) // 2 + 1)
    )


@lru_cache(maxsize=None)
def _wigner3j_twice(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    if m1 + m2 + m3 != 0:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    if (j1 + m1) % 2 or (j2 + m2) % 2 or (j3 + m3) % 2:
        return 0.0
    if j3 > j1 + j2 or j3 < abs(j1 - j2) or (j1 + j2 + j3) % 2:
        return 0.0
    pre = sqrt(
        _delta(j1, j2, j3)
        * factorial((j1 + m1) // 2)
        * factorial((j1 - m1) // 2)
        * factorial((j2 + m2) // 2)
        * factorial((j2 - m2) // 2)
        * factorial((j3 + m3) // 2)
        * factorial((j3 - m3) // 2)
    )
    kmin = max(0, (j2 - j3 - m1) // 2, (j1 - j3 + m2) // 2)
    kmax = min((j1 + j2 - j3) // 2, (j1 - m1) // 2, (j2 + m2) // 2)
    total = 0.0
    for k in range(kmin, kmax + 1):
        total += (-1) ** k / (
            factorial(k)
            * factorial((j1 + j2 - j3) // 2 - k)
            * factorial((j1 - m1) // 2 - k)
            * factorial((j2 + m2) // 2 - k)
            * factorial((j3 - j2 + m1) // 2 + k)
            * factorial((j3 - j1 - m2) // 2 + k)
        )
    sign = -1 if ((j1 - j2 - m3) // 2) % 2 else 1
    return sign * pre * total


def wigner3j(j1: float, j2: float, j3: float, m1: float, m2: float, m3: float) -> float:
    """Wigner 3j symbol (j1 j2 j3; m1 m2 m3) for integer or half-integer arguments."""
    return _wigner3j_twice(
        _twice(j1), _twice(j2), _twice(j3), _twice(m1), _twice(m2), _twice(m3)
    )


def clebsch_gordan(j1: float, m1: float, j2: float, m2: float, j: float, m: float) -> float:
    """<j1 m1; j2 m2 | j m> in the Condon-Shortley convention."""
    phase2 = _twice(j1) - _twice(j2) + _twice(m)
    sign = -1 if (phase2 // 2) % 2 else 1
    return sign * sqrt(2 * j + 1) * wigner3j(j1, j2, j, m1, m2, -m)
