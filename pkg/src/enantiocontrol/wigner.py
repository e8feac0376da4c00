"""Wigner 3j symbols and symmetric-top matrix elements of D^1_{MK}."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

__all__ = ["SymTopKet", "wigner3j", "d1_element"]


@dataclass(frozen=True)
class SymTopKet:
    """Symmetric-top basis state |J, K, M>."""

    J: int
    K: int
    M: int

    def __post_init__(self):
        if self.J < 0 or abs(self.K) > self.J or abs(self.M) > self.J:
            raise ValueError(f"invalid symmetric-top quantum numbers {self}")


def _check_integer(*values):
    for v in values:
        if int(v) != v:
            raise ValueError("only integer angular momenta are supported")


@lru_cache(maxsize=65536)
def _w3j(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    if m1 + m2 + m3 != 0:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    if j3 > j1 + j2 or j3 < abs(j1 - j2):
        return 0.0

    f = math.factorial
    kmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    total = 0
    # exact integer Racah sum; float only at the final square root
    for k in range(kmin, kmax + 1):
        denom = (
            f(k)
            * f(j1 + j2 - j3 - k)
            * f(j1 - m1 - k)
            * f(j2 + m2 - k)
            * f(j3 - j2 + m1 + k)
            * f(j3 - j1 - m2 + k)
        )
        total += (-1) ** k * Fraction(1, denom)
    tri_num = f(j1 + j2 - j3) * f(j1 - j2 + j3) * f(-j1 + j2 + j3)
    tri_den = f(j1 + j2 + j3 + 1)
    mprod = f(j1 + m1) * f(j1 - m1) * f(j2 + m2) * f(j2 - m2) * f(j3 + m3) * f(j3 - m3)
    sq = Fraction(tri_num * mprod, tri_den)
    value = float(total) * math.sqrt(float(sq))
    sign = -1 if (j1 - j2 - m3) % 2 else 1
    return sign * value


def wigner3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3j symbol (j1 j2 j3; m1 m2 m3) from the Racah formula.

    Returns 0.0 whenever the triangle, projection-range or m-sum conditions
    fail. Only integer arguments are accepted.
    """
    _check_integer(j1, j2, j3, m1, m2, m3)
    return _w3j(int(j1), int(j2), int(j3), int(m1), int(m2), int(m3))


def d1_element(bra: SymTopKet, M: int, K: int, ket: SymTopKet) -> float:
    """<J'',K'',M''| D^1_{MK} |J',K',M'> in the symmetric-top basis.

    Zero unless M'' = M' + M, K'' = K' + K and |J'' - J'| <= 1.
    """
    if abs(M) > 1 or abs(K) > 1:
        raise ValueError("D^1 indices must lie in {-1, 0, 1}")
    if bra.M != ket.M + M or bra.K != ket.K + K or abs(bra.J - ket.J) > 1:
        return 0.0
    phase = -1.0 if (bra.M + bra.K) % 2 else 1.0
    return (
        math.sqrt((2 * bra.J + 1) * (2 * ket.J + 1))
        * phase
        * _w3j(ket.J, 1, bra.J, ket.M, M, -bra.M)
        * _w3j(ket.J, 1, bra.J, ket.K, K, -bra.K)
    )
