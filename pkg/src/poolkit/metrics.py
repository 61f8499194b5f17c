"""Expected performance of random k-sets designs.

Two headline measures, both under the binomial library model in which each
of ``n`` clones is positive independently with probability ``c / n``:

* ``n_bar`` -- expected number of unresolved negative clones;
* ``p_bar`` -- expected number of unresolved positive clones.

Backends
--------
``"fraction"``  exact rationals, no truncation (small ``n`` only).
``"mpmath"``    high precision reals, sum over the number of positives
                truncated once the binomial tail drops below ``tail``.
``"float"``     numpy float64, same truncation; used by the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence, Tuple

import mpmath
import numpy as np
from scipy import stats

from .combinatorics import (
    DEFAULT_DIGITS,
    DesignShape,
    _convert,
    coverage_series,
    precision,
    zed_table,
)

DEFAULT_TAIL = 1e-12
BACKENDS = ("fraction", "mpmath", "float")


class PrecisionError(ArithmeticError):
    """Two evaluations that must agree did not, at the working precision."""


class BudgetExceeded(RuntimeError):
    """The requested evaluation would need more summands than allowed."""


@dataclass(frozen=True)
class LibraryModel:
    """``n`` clones, each positive independently with probability ``c / n``."""

    n: int
    c: float | Fraction

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not 0 < self.c < self.n:
            raise ValueError(f"coverage must satisfy 0 < c < n, got c={self.c!r}, n={self.n}")

    @property
    def prob(self):
        if isinstance(self.c, (int, Fraction)):
            return Fraction(self.c) / self.n
        return self.c / self.n


@dataclass
class MetricsResult:
    n: int
    c: float
    n_bar: float
    p_bar: float
    method: str
    digits: int | None = None
    resolved_negatives: float = field(init=False)
    resolved_positives: float = field(init=False)
    confirmatory_load: float = field(init=False)

    def __post_init__(self):
        self.resolved_negatives = self.n - self.c - self.n_bar
        self.resolved_positives = self.c - self.p_bar
        self.confirmatory_load = self.c + self.n_bar


def _check_backend(backend: str) -> None:
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")


# -- distribution of the number of positives ---------------------------------


def tail_cutoff(model: LibraryModel, tail: float = DEFAULT_TAIL) -> int:
    """Smallest ``p_max`` with ``Pr(#positives > p_max) < tail``."""
    p_max = int(stats.binom.isf(tail, model.n, float(model.prob)))
    while p_max < model.n and stats.binom.sf(p_max, model.n, float(model.prob)) >= tail:
        p_max += 1
    return min(model.n, max(p_max, 1))


def positive_count_pmf(model: LibraryModel, backend: str = "mpmath",
                       tail: float | None = DEFAULT_TAIL) -> List[Tuple[int, object]]:
    """``[(p, Pr(#positives = p)), ...]`` up to the truncation point.

    The whole distribution over the number of positives enters the metrics
    only through this function.
    """
    _check_backend(backend)
    n = model.n
    p_max = n if backend == "fraction" or tail is None else tail_cutoff(model, tail)
    if backend == "float":
        ps = np.arange(p_max + 1)
        return list(zip(ps.tolist(), stats.binom.pmf(ps, n, float(model.prob)).tolist()))
    exact = backend == "fraction"
    t = _convert(model.prob, exact)
    out = []
    term = (1 - t) ** n
    for p in range(p_max + 1):
        out.append((p, term))
        term = term * (n - p) / (p + 1) * t / (1 - t) if t != 1 else term
    return out


# -- unresolved negatives -----------------------------------------------------


def unresolved_negatives_exact(model: LibraryModel, shape: DesignShape,
                               backend: str = "mpmath", digits: int = DEFAULT_DIGITS,
                               tail: float = DEFAULT_TAIL, check: bool = True,
                               tolerance: float = 1e-20):
    """Expected unresolved negatives, summing exactly over the number of positives.

    ``n_bar = sum_p (n - p) B(n, p, c/n) K[p][k]``. ``K`` comes from the
    subtraction-free recursion; with ``check`` the inclusion-exclusion form is
    evaluated alongside and a :class:`PrecisionError` is raised if the two
    differ by more than ``tolerance`` (ignored for exact rationals, where the
    two are identical by construction).
    """
    _check_backend(backend)
    if backend == "float":
        return _n_bar_float(model, shape, tail)
    exact = backend == "fraction"
    with precision(digits):
        pmf = positive_count_pmf(model, backend, tail)
        z = zed_table(shape, exact)
        k = shape.k
        signed = [_convert((-1) ** i * math.comb(k, i), exact) for i in range(k + 1)]
        total = _convert(0, exact)
        worst = _convert(0, exact)
        series = coverage_series(shape, exact=exact)
        for (p, weight), K_row in zip(pmf, series):
            K = K_row[k]
            if check and not exact:
                ie = sum(s * (z[i] ** p if p else 1) for i, s in enumerate(signed))
                worst = max(worst, abs(ie - K))
            total += (model.n - p) * weight * K
        if worst > tolerance:
            raise PrecisionError(
                f"K recursion and inclusion-exclusion differ by {mpmath.nstr(worst, 5)} "
                f"at {digits} digits; raise the precision")
        return total


def _n_bar_float(model: LibraryModel, shape: DesignShape, tail: float) -> float:
    p, w = _float_pmf(model, tail)
    K = np.array([row[shape.k] for row, _ in zip(_coverage_float(shape), p)])
    return float(np.sum((model.n - p) * w * K))


def _float_pmf(model: LibraryModel, tail: float):
    p_max = tail_cutoff(model, tail)
    p = np.arange(p_max + 1)
    return p, stats.binom.pmf(p, model.n, float(model.prob))


def _coverage_float(shape: DesignShape):
    v, k = shape.v, shape.k
    W = np.zeros((k + 1, k + 1))
    for j in range(k + 1):
        for i in range(j + 1):
            W[j, i] = math.comb(j, i) * math.comb(v - j, k - i) / math.comb(v, k)
    K = np.zeros(k + 1)
    K[0] = 1.0
    while True:
        yield K
        K = np.array([W[j, : j + 1] @ K[j::-1] for j in range(k + 1)])


def unresolved_negatives_asymptotic(model: LibraryModel, shape: DesignShape,
                                    digits: int = DEFAULT_DIGITS):
    """Large-``n`` form ``(n - c) sum_i C(k,i) (-1)^i exp(-c (1 - z_i))``."""
    with precision(digits):
        z = zed_table(shape, exact=False)
        c = _convert(model.c, False)
        k = shape.k
        s = mpmath.fsum((-1) ** i * math.comb(k, i) * mpmath.exp(-c * (1 - z[i]))
                        for i in range(k + 1))
        return (model.n - c) * s


def unresolved_negatives_independent_pools(model: LibraryModel, shape: DesignShape,
                                           backend: str = "mpmath",
                                           digits: int = DEFAULT_DIGITS,
                                           tail: float = DEFAULT_TAIL):
    """Expected unresolved negatives with ``K[p][k] ~ (1 - (1 - k/v)^p)^k``.

    An upper bound on the exact value.
    """
    _check_backend(backend)
    v, k = shape.v, shape.k
    if backend == "float":
        p, w = _float_pmf(model, tail)
        return float(np.sum((model.n - p) * w * (1 - (1 - k / v) ** p) ** k))
    exact = backend == "fraction"
    with precision(digits):
        q = 1 - _convert(Fraction(k, v), exact)
        return sum(((model.n - p) * w * (1 - q**p) ** k
                    for p, w in positive_count_pmf(model, backend, tail)),
                   _convert(0, exact))


# -- unresolved positives -----------------------------------------------------


def alpha_single(model: LibraryModel, shape: DesignShape, exact: bool = False):
    """Probability the sole positive is unresolved: some negative shares its k-set."""
    inv = _convert(Fraction(1, math.comb(shape.v, shape.k)), exact)
    return 1 - (1 - inv) ** (model.n - 1)


def summand_estimate(shape: DesignShape) -> int:
    """Number of innermost terms in the closed-form double sum."""
    v, k = shape.v, shape.k
    count = 0
    for x in range(k, v + 1):
        for y in range(x, min(v, x + k) + 1):
            count += (x - k + 1) * (y - x + 1)
    return count


def unresolved_positives_exact(model: LibraryModel, shape: DesignShape,
                               route: str = "chain", backend: str = "mpmath",
                               digits: int = DEFAULT_DIGITS, tail: float = DEFAULT_TAIL,
                               max_summands: int = 2_000_000, check: bool = True):
    """Expected number of unresolved positive clones, without approximation.

    ``route="closed_form"`` evaluates the full double sum over the number of
    positive pools with and without the selected clone (the alternating
    inner sums ``Q`` and ``R``), summed in closed form over the number of
    positives. With ``check`` the sum is repeated at twice the digits and a
    :class:`PrecisionError` raised unless the two agree to 1e-6 relative.

    ``route="chain"`` conditions on the number ``x`` of pools covered by the
    other ``p - 1`` positives, whose distribution is propagated by a
    subtraction-free Markov recursion; only the short alternating sum over
    the selected clone's private pools (at most ``k`` terms) remains. The
    sum over ``p`` is explicit and truncated at ``tail``.
    """
    _check_backend(backend)
    if route == "closed_form":
        if backend == "float":
            raise ValueError("the closed form needs the fraction or mpmath backend")
        budget = summand_estimate(shape)
        if budget > max_summands:
            raise BudgetExceeded(
                f"closed form needs ~{budget} summands (limit {max_summands}); "
                "use route='chain' or unresolved_positives_approx")
        if backend == "fraction":
            return _p_bar_closed_form(model, shape, exact=True)
        with precision(digits):
            value = _p_bar_closed_form(model, shape, exact=False)
        if check:
            with precision(2 * digits):
                again = _p_bar_closed_form(model, shape, exact=False)
            if abs(again - value) > 1e-6 * max(abs(again), mpmath.mpf(1e-30)):
                raise PrecisionError(
                    f"closed form unstable at {digits} digits: {value} vs {again}")
        return value
    if route != "chain":
        raise ValueError(f"unknown route {route!r}")
    if backend == "float":
        return _p_bar_chain_float(model, shape, tail)
    with precision(digits):
        return _p_bar_chain(model, shape, backend, tail)


def _p_bar_closed_form(model: LibraryModel, shape: DesignShape, exact: bool):
    n, v, k = model.n, shape.v, shape.k
    one = _convert(1, exact)
    t = _convert(model.prob, exact)
    c = t * n
    z = zed_table(shape, exact)
    ck = math.comb(v, k)
    head = c * (1 - t) ** (n - 1) * alpha_single(model, shape, exact)
    body = _convert(0, exact)
    for y in range(k, v + 1):
        beta = _convert(Fraction(math.comb(y, k), ck), exact)
        xi = [_convert(Fraction(math.comb(y - j, k), math.comb(y, k)), exact)
              for j in range(y - k + 1)]
        # R[i][j] for i in [v - y, v - k]; only x <= y is ever used
        base = [(1 - t) * (1 - beta * (1 - xi[j])) for j in range(len(xi))]
        lower = [b ** (n - 1) for b in base]
        for x in range(max(k, y - k), y + 1):
            weight = math.comb(v, x) * math.comb(x, y - k) * math.comb(v - x, y - x)
            if weight == 0:
                continue
            Q = _convert(0, exact)
            for i in range(v - x, v - k + 1):
                ci = math.comb(x, v - i) * (-1) ** (i - v + x)
                zc = z[i] * t
                inner = sum(((-1) ** j * math.comb(y - x, j) * ((zc + base[j]) ** (n - 1) - lower[j])
                             for j in range(y - x + 1)), _convert(0, exact))
                Q += ci * inner
            body += _convert(Fraction(weight, ck), exact) * Q
    return head + c * body * one


def _transition(shape: DesignShape, exact: bool):
    """``T[x][y]``: probability one more clone takes the covered count from x to y."""
    v, k = shape.v, shape.k
    ck = math.comb(v, k)
    return [{x + h: _convert(Fraction(math.comb(v - x, h) * math.comb(x, k - h), ck), exact)
             for h in range(0, min(k, v - x) + 1) if math.comb(x, k - h)}
            for x in range(v + 1)]


def _p_bar_chain(model: LibraryModel, shape: DesignShape, backend: str, tail):
    exact = backend == "fraction"
    n, v, k = model.n, shape.v, shape.k
    zero = _convert(0, exact)
    ck = math.comb(v, k)
    T = _transition(shape, exact)
    beta = [_convert(Fraction(math.comb(y, k), ck), exact) for y in range(v + 1)]
    # base[y][j] = 1 - beta_y (1 - xi_{y,j}), raised to the number of negatives
    base = []
    for y in range(v + 1):
        cy = math.comb(y, k)
        base.append([1 - beta[y] * (1 - _convert(Fraction(math.comb(y - j, k), cy), exact))
                     if cy else _convert(1, exact) for j in range(k + 1)])
    M = [_convert(1 if x == 0 else 0, exact) for x in range(v + 1)]
    total = zero
    for p, weight in positive_count_pmf(model, backend, tail):
        if p == 0:
            continue
        m = n - p
        alpha = zero
        for x, mx in enumerate(M):
            if not mx:
                continue
            for y, h in T[x].items():
                d = y - x
                powers = [b**m if m else _convert(1, exact) for b in base[y][: d + 1]]
                G = sum(((-1) ** j * math.comb(d, j) * powers[j] for j in range(d + 1)), zero)
                alpha += mx * h * G
        total += p * weight * alpha
        M = _step(M, T, zero)
    return total


def _step(M, T, zero):
    out = [zero] * len(M)
    for x, mx in enumerate(M):
        if mx:
            for y, h in T[x].items():
                out[y] += mx * h
    return out


def _p_bar_chain_float(model: LibraryModel, shape: DesignShape, tail: float) -> float:
    n, v, k = model.n, shape.v, shape.k
    ck = math.comb(v, k)
    ys = np.arange(v + 1)
    # banded transition T[x, x + d] stored as diag[d][x]
    diag = np.zeros((k + 1, v + 1))
    for d in range(k + 1):
        for x in range(v + 1 - d):
            diag[d, x] = math.comb(v - x, d) * math.comb(x, k - d) / ck
    beta = np.array([math.comb(int(y), k) / ck for y in ys])
    xi = np.zeros((v + 1, k + 1))
    for y in range(k, v + 1):
        cy = math.comb(y, k)
        xi[y] = [math.comb(y - j, k) / cy for j in range(k + 1)]
    base = 1.0 - beta[:, None] * (1.0 - xi)
    with np.errstate(divide="ignore"):
        log_base = np.log(base)
    signs = np.array([[(-1) ** j * math.comb(d, j) if j <= d else 0 for d in range(k + 1)]
                      for j in range(k + 1)], dtype=float)
    p, w = _float_pmf(model, tail)
    M = np.zeros(v + 1)
    M[0] = 1.0
    total = 0.0
    for pp, ww in zip(p[1:], w[1:]):
        m = n - pp
        powers = np.exp(m * log_base) if m else np.ones_like(base)
        G = np.clip(powers @ signs, 0.0, 1.0)  # G[y, d]
        alpha = 0.0
        new = np.zeros(v + 1)
        for d in range(k + 1):
            flow = M[: v + 1 - d] * diag[d, : v + 1 - d]
            alpha += flow @ G[d:, d]
            new[d:] += flow
        total += pp * ww * alpha
        M = new
    return float(total)


# -- approximations -----------------------------------------------------------


def _real_binom_ratio(top, bottom, k: int):
    """``C(top, k) / C(bottom, k)`` with real ``top``; 0 once ``top <= k - 1``."""
    if top <= k - 1:
        return top * 0
    r = top * 0 + 1
    for m in range(k):
        r = r * (top - m) / (bottom - m)
    return min(max(r, 0), 1)


def approx_intermediates(p: int, shape: DesignShape, exact: bool = False):
    """``(omega, mu, zeta)`` for ``p`` positives.

    ``omega`` is the expected number of positive pools, ``mu`` the chance a
    negative clone lies entirely inside ``omega`` pools, and ``zeta[i]`` the
    chance a k-set inside the positive pools also avoids ``i`` given ones.
    """
    v, k = shape.v, shape.k
    q = 1 - _convert(Fraction(k, v), exact)
    omega = v * (1 - q**p)
    mu = _real_binom_ratio(omega, _convert(v, exact), k)
    zeta = [_real_binom_ratio(omega - i, omega, k) for i in range(k + 1)]
    return omega, mu, zeta


def unresolved_positives_approx(model: LibraryModel, shape: DesignShape,
                                variant: str = "correlated", backend: str = "float",
                                digits: int = DEFAULT_DIGITS, tail: float = DEFAULT_TAIL):
    """Approximate expected unresolved positives with the positive-pool count fixed.

    The number of positive pools is replaced by its expectation ``omega`` and
    the number of unresolved negatives by a Poisson variable. ``"correlated"``
    keeps the exact inclusion-exclusion over the selected clone's pools;
    ``"independent_pools"`` treats those pools as independent.
    """
    if variant not in ("correlated", "independent_pools"):
        raise ValueError(f"unknown variant {variant!r}")
    if backend == "float":
        return _p_bar_approx_float(model, shape, variant, tail)
    if backend != "mpmath":
        raise ValueError("approximations support the float and mpmath backends")
    n, v, k = model.n, shape.v, shape.k
    with precision(digits):
        z = zed_table(shape, exact=False)
        q = 1 - mpmath.mpf(k) / v
        total = mpmath.mpf(0)
        for p, w in positive_count_pmf(model, "mpmath", tail):
            if p == 0:
                continue
            omega, mu, zeta = approx_intermediates(p, shape)
            if variant == "independent_pools":
                inner = (1 - q ** (p - 1) * mpmath.exp(-mu * (n - p) * k / omega)) ** k
            else:
                inner = mpmath.fsum((-1) ** i * math.comb(k, i) * z[i] ** (p - 1)
                                    * mpmath.exp(-mu * (n - p) * (1 - zeta[i]))
                                    for i in range(k + 1))
            total += p * w * inner
        return total


def _ratio_float(top: np.ndarray, bottom, k: int) -> np.ndarray:
    r = np.ones_like(top, dtype=float)
    for m in range(k):
        r = r * (top - m) / (bottom - m)
    r = np.where(top <= k - 1, 0.0, r)
    return np.clip(r, 0.0, 1.0)


def _p_bar_approx_float(model: LibraryModel, shape: DesignShape, variant: str,
                        tail: float) -> float:
    n, v, k = model.n, shape.v, shape.k
    p, w = _float_pmf(model, tail)
    p, w = p[1:], w[1:]
    q = 1.0 - k / v
    omega = v * (1.0 - q**p)
    mu = _ratio_float(omega, float(v), k)
    if variant == "independent_pools":
        inner = (1.0 - q ** (p - 1) * np.exp(-mu * (n - p) * k / omega)) ** k
    else:
        i = np.arange(k + 1)
        z = np.array([math.comb(v - ii, k) / math.comb(v, k) for ii in i])
        zeta = _ratio_float(omega[:, None] - i[None, :], omega[:, None], k)
        coef = np.array([(-1) ** ii * math.comb(k, ii) for ii in i], dtype=float)
        # numpy gives 0.0 ** 0 == 1.0, the p == 1 case
        zp = z[None, :] ** (p[:, None] - 1)
        terms = zp * np.exp(-mu[:, None] * (n - p)[:, None] * (1.0 - zeta))
        inner = terms @ coef
    return float(np.sum(p * w * inner))


# -- combined -----------------------------------------------------------------

METHODS = ("exact", "approx", "independent_pools", "float")


def evaluate(model: LibraryModel, shape: DesignShape, method: str = "exact",
             digits: int = DEFAULT_DIGITS) -> MetricsResult:
    """Both measures plus the derived counts for one ``(n, c, v, k)``.

    ``exact``: exact sums in high precision. ``float``: the same sums in
    double precision. ``approx``: large-``n`` unresolved negatives and the
    correlated fixed-``omega`` approximation for positives.
    ``independent_pools``: both measures under the independent-pools
    approximation.
    """
    if method == "exact":
        n_bar = unresolved_negatives_exact(model, shape, digits=digits)
        p_bar = unresolved_positives_exact(model, shape, digits=digits)
    elif method == "float":
        n_bar = unresolved_negatives_exact(model, shape, backend="float")
        p_bar = unresolved_positives_exact(model, shape, backend="float")
    elif method == "approx":
        n_bar = unresolved_negatives_asymptotic(model, shape, digits=digits)
        p_bar = unresolved_positives_approx(model, shape)
    elif method == "independent_pools":
        n_bar = unresolved_negatives_independent_pools(model, shape, digits=digits)
        p_bar = unresolved_positives_approx(model, shape, variant="independent_pools")
    else:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    return MetricsResult(model.n, float(model.c), float(n_bar), float(p_bar), method,
                         digits if method in ("exact", "approx", "independent_pools") else None)
