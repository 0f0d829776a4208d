"""Canonical signed-digit recoding of integer constants."""

from __future__ import annotations


def csd_digits(n: int):
    """Nonzero digits of the non-adjacent form of ``n``, most significant first.

    Returns ``[(shift, sign), ...]`` with ``sign`` in {+1, -1} such that
    ``n == sum(sign << shift)``; no two returned shifts are adjacent.
    """
    n = int(n)
    digits = []
    k = 0
    while n != 0:
        if n & 1:
            d = 2 - (n & 3)  # +1 if n = 1 mod 4, -1 if n = 3 mod 4
            digits.append((k, d))
            n -= d
        n >>= 1
        k += 1
    return digits[::-1]


def csd_value(digits) -> int:
    return sum(sign << shift for shift, sign in digits)


def binary_weight(n: int) -> int:
    """Nonzero digit count of the plain two's-complement magnitude form."""
    return bin(abs(int(n))).count("1")
