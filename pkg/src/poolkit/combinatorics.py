"""Exact and high-precision kernels for random k-sets designs.

Every quantity here comes in two numeric flavours:

* exact rationals (:class:`fractions.Fraction`), used as the test oracle
  regime and whenever the inputs are themselves rational;
* high-precision reals (:class:`mpmath.mpf`) evaluated under the active
  mpmath context (see :func:`precision`).

The recursions for ``K`` and ``L`` contain no subtractions and are the
production path; the inclusion-exclusion forms are kept as a cross-check.

Notation: ``v`` pools, each clone in ``k`` of them, ``p`` positive clones.
``K[p][j]`` is the probability that ``j`` specified pools each contain at
least one positive clone; ``L[p][j]`` is the probability that ``j``
specified pools are exactly the set of negative pools.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, List, Union

import mpmath

DEFAULT_DIGITS = 50

ExactRational = Fraction
HighPrecisionReal = mpmath.mpf
Number = Union[Fraction, mpmath.mpf]

RECURSIVE = "recursive"
INCLUSION_EXCLUSION = "inclusion_exclusion"
_METHODS = (RECURSIVE, INCLUSION_EXCLUSION)


@dataclass(frozen=True)
class DesignShape:
    """Pool count ``v`` and pools-per-clone ``k`` of a k-sets design."""

    v: int
    k: int

    def __post_init__(self):
        if int(self.v) != self.v or self.v < 1:
            raise ValueError(f"v must be a positive integer, got {self.v!r}")
        if int(self.k) != self.k or not 1 <= self.k <= self.v:
            raise ValueError(f"k must satisfy 1 <= k <= v, got k={self.k!r}, v={self.v}")


@contextlib.contextmanager
def precision(digits: int = DEFAULT_DIGITS):
    """Run a block with at least ``digits`` significant decimal digits.

    Never lowers the precision of an enclosing context.
    """
    with mpmath.workdps(max(int(digits), mpmath.mp.dps)):
        yield


def _convert(x, exact: bool) -> Number:
    if exact:
        if isinstance(x, mpmath.mpf):
            raise TypeError("cannot form an exact rational from an mpmath real")
        return Fraction(x)
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


def binom_exact(a: int, b: int) -> Fraction:
    """Binomial coefficient ``a choose b`` as an exact rational; 0 out of range."""
    if a < 0:
        raise ValueError(f"a must be nonnegative, got {a}")
    if b < 0 or b > a:
        return Fraction(0)
    return Fraction(math.comb(a, b))


def binom_pmf(a: int, b: int, t, exact: bool | None = None) -> Number:
    """Binomial probability ``C(a, b) t**b (1-t)**(a-b)``.

    The result is exact when ``t`` is an int or Fraction (or ``exact=True``),
    otherwise an mpmath real at the current working precision.
    """
    if exact is None:
        exact = isinstance(t, (int, Fraction))
    t = _convert(t, exact)
    if t < 0 or t > 1:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if a < 0:
        raise ValueError(f"a must be nonnegative, got {a}")
    if b < 0 or b > a:
        return _convert(0, exact)
    return _convert(math.comb(a, b), exact) * t**b * (1 - t) ** (a - b)


def zed(i: int, shape: DesignShape, exact: bool = True) -> Number:
    """Probability that a random k-set avoids ``i`` specified pools."""
    v, k = shape.v, shape.k
    if i < 0 or i > v:
        raise ValueError(f"i must satisfy 0 <= i <= v={v}, got {i}")
    value = Fraction(math.comb(v - i, k), math.comb(v, k))
    return value if exact else _convert(value, False)


def zed_table(shape: DesignShape, exact: bool = True) -> List[Number]:
    return [zed(i, shape, exact) for i in range(shape.v + 1)]


def _power(base: Number, p: int, exact: bool) -> Number:
    # 0**0 == 1 in both backends, which the p == 0 base cases rely on
    return base**p if p else _convert(1, exact)


# -- K: coverage of j specified pools ----------------------------------------


def coverage_series(shape: DesignShape, j_max: int | None = None,
                    exact: bool = True) -> Iterator[List[Number]]:
    """Yield ``[K[p][0], ..., K[p][j_max]]`` for ``p = 0, 1, 2, ...``.

    Uses the subtraction-free recursion
    ``K[p][j] = sum_i C(j,i) C(v-j,k-i) / C(v,k) * K[p-1][j-i]``.
    """
    v, k = shape.v, shape.k
    j_max = k if j_max is None else j_max
    if not 0 <= j_max <= k:
        raise ValueError(f"recursion is defined for j <= k={k}, got j={j_max}")
    total = math.comb(v, k)
    # weights[j][i]: the next clone hits exactly a given i-subset of j pools
    weights = [[_convert(Fraction(math.comb(j, i) * math.comb(v - j, k - i), total), exact)
                for i in range(j + 1)] for j in range(j_max + 1)]
    current = [_convert(1 if j == 0 else 0, exact) for j in range(j_max + 1)]
    while True:
        yield current
        current = [sum((weights[j][i] * current[j - i] for i in range(j + 1)),
                       _convert(0, exact))
                   for j in range(j_max + 1)]


def coverage_prob_K(p: int, j: int, shape: DesignShape, method: str = RECURSIVE,
                    exact: bool = True) -> Number:
    """Probability that ``j`` specified pools all contain one of ``p`` positives."""
    _check_method(method)
    if p < 0 or j < 0:
        raise ValueError("p and j must be nonnegative")
    if j > shape.v:
        raise ValueError(f"j must not exceed v={shape.v}")
    if method == RECURSIVE:
        if j > shape.k:
            raise ValueError(f"the K recursion requires j <= k={shape.k}, got j={j}")
        for step, row in enumerate(coverage_series(shape, j, exact)):
            if step == p:
                return row[j]
    z = zed_table(shape, exact)
    return sum((_convert((-1) ** i * math.comb(j, i), exact) * _power(z[i], p, exact)
                for i in range(j + 1)), _convert(0, exact))


# -- L: j specified pools are exactly the negative pools ---------------------


def negative_set_series(shape: DesignShape, exact: bool = True) -> Iterator[List[Number]]:
    """Yield ``[L[p][0], ..., L[p][v]]`` for ``p = 0, 1, 2, ...``.

    The previous negative set must be a superset of size ``i`` of the ``j``
    target pools (``C(v-j, i-j)`` of them); the new clone then hits exactly
    the ``i - j`` extra pools and puts its other pools among the ``v - i``
    already-positive ones.
    """
    v, k = shape.v, shape.k
    total = math.comb(v, k)
    weights = [{i: _convert(Fraction(math.comb(v - j, i - j) * math.comb(v - i, k - i + j), total),
                            exact)
                for i in range(j, min(j + k, v) + 1)} for j in range(v + 1)]
    current = [_convert(1 if j == v else 0, exact) for j in range(v + 1)]
    while True:
        yield current
        current = [sum((w * current[i] for i, w in weights[j].items()), _convert(0, exact))
                   for j in range(v + 1)]


def negative_count_series(shape: DesignShape, exact: bool = True) -> Iterator[List[Number]]:
    """Yield the pmf of the number of negative pools, ``C(v,j) L[p][j]``.

    This is the chain obtained with coefficient ``C(i, j)`` in place of
    ``C(v-j, i-j)``: it tracks how many pools are negative rather than
    whether a particular set is.
    """
    v, k = shape.v, shape.k
    total = math.comb(v, k)
    weights = [{i: _convert(Fraction(math.comb(i, j) * math.comb(v - i, k - i + j), total), exact)
                for i in range(j, min(j + k, v) + 1)} for j in range(v + 1)]
    current = [_convert(1 if j == v else 0, exact) for j in range(v + 1)]
    while True:
        yield current
        current = [sum((w * current[i] for i, w in weights[j].items()), _convert(0, exact))
                   for j in range(v + 1)]


def negative_pools_prob_L(p: int, j: int, shape: DesignShape, method: str = RECURSIVE,
                          exact: bool = True) -> Number:
    """Probability that ``j`` specified pools are precisely the negative pools."""
    _check_method(method)
    v = shape.v
    if p < 0:
        raise ValueError("p must be nonnegative")
    if not 0 <= j <= v:
        raise ValueError(f"j must satisfy 0 <= j <= v={v}, got {j}")
    if method == RECURSIVE:
        for step, row in enumerate(negative_set_series(shape, exact)):
            if step == p:
                return row[j]
    z = zed_table(shape, exact)
    # z[i] == 0 for i > v - k, so the upper limit only matters when p == 0
    return sum((_convert((-1) ** (i - j) * math.comb(v - j, i - j), exact) * _power(z[i], p, exact)
                for i in range(j, v + 1)), _convert(0, exact))


# -- conversions --------------------------------------------------------------

K_FROM_L = "K_from_L"
L_FROM_K = "L_from_K"


def convert_K_L(direction: str, p: int, j: int, shape: DesignShape,
                exact: bool = True) -> Number:
    """Obtain ``K[p][j]`` from the ``L[p][.]`` row, or ``L[p][j]`` from ``K[p][.]``.

    ``K[p][j] = sum_{i=0}^{v-j} C(v-j, i) L[p][i]``: the negative set must
    lie inside the ``v - j`` unspecified pools.

    ``L[p][j] = sum_{i=v-j}^{v} C(j, i-v+j) (-1)^(i-v+j) K[p][i]``.
    """
    v = shape.v
    if not 0 <= j <= v:
        raise ValueError(f"j must satisfy 0 <= j <= v={v}, got {j}")
    zero = _convert(0, exact)
    if direction == K_FROM_L:
        row = _nth(negative_set_series(shape, exact), p)
        return sum((_convert(math.comb(v - j, i), exact) * row[i] for i in range(v - j + 1)), zero)
    if direction == L_FROM_K:
        # K beyond j = k is outside the recursion's range
        K = [coverage_prob_K(p, i, shape, INCLUSION_EXCLUSION, exact) for i in range(v + 1)]
        return sum((_convert((-1) ** (i - v + j) * math.comb(j, i - v + j), exact) * K[i]
                    for i in range(v - j, v + 1)), zero)
    raise ValueError(f"unknown direction {direction!r}")


def _nth(iterator, p: int):
    for step, row in enumerate(iterator):
        if step == p:
            return row


def _check_method(method: str) -> None:
    if method not in _METHODS:
        raise ValueError(f"method must be one of {_METHODS}, got {method!r}")
