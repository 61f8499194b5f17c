"""Choosing ``v`` and ``k`` for a target number of resolved positives."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .combinatorics import DesignShape
from .metrics import (
    LibraryModel,
    unresolved_negatives_asymptotic,
    unresolved_positives_approx,
    unresolved_positives_exact,
)

log = logging.getLogger(__name__)

K_MAX = 40
METHODS = ("approx", "exact")
SWEEP_HEADER = ["n", "c", "fraction", "v_min", "k_opt", "resolved_exp", "unresolved_neg_exp"]


class Infeasible(RuntimeError):
    """No ``v`` in the search range reaches the target."""


@dataclass(frozen=True)
class OptimizationTarget:
    """Target ``fraction * c`` expected resolved positives.

    ``method`` selects how the expectation is computed: ``"approx"`` uses the
    fixed-positive-pool-count approximation (double precision, fast),
    ``"exact"`` the exact expectation evaluated by the covered-count chain.
    """

    fraction: float
    method: str = "approx"
    k_range: Tuple[int, int] | None = None
    v_range: Tuple[int, int] = (1, 5000)

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ValueError(f"fraction must lie in (0, 1), got {self.fraction}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        lo, hi = self.v_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad v_range {self.v_range}")
        if self.k_range is not None and not 1 <= self.k_range[0] <= self.k_range[1]:
            raise ValueError(f"bad k_range {self.k_range}")

    def ks(self, v: int) -> range:
        lo, hi = self.k_range if self.k_range is not None else (1, K_MAX)
        return range(lo, min(hi, v) + 1)


@dataclass(frozen=True)
class OptimizationResult:
    v_min: int
    k_opt: int
    resolved: float
    unresolved_negatives: float
    clones_per_pool: float


def resolved_expectation(model: LibraryModel, v: int, k: int, method: str = "approx") -> float:
    """Expected number of resolved positives, ``c - p_bar``."""
    shape = DesignShape(v, k)
    if method == "approx":
        p_bar = unresolved_positives_approx(model, shape)
    elif method == "exact":
        p_bar = unresolved_positives_exact(model, shape, backend="float")
    else:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    return float(model.c) - float(p_bar)


def optimal_k(model: LibraryModel, v: int, target: OptimizationTarget) -> Tuple[int, float]:
    """The ``k`` maximizing expected resolved positives at ``v``; ties go to smaller ``k``."""
    best_k, best = None, -math.inf
    for k in target.ks(v):
        value = resolved_expectation(model, v, k, target.method)
        if value > best:
            best_k, best = k, value
    if best_k is None:
        raise Infeasible(f"no admissible k for v={v} with k_range={target.k_range}")
    return best_k, best


def min_pools(model: LibraryModel, target: OptimizationTarget) -> OptimizationResult:
    """Smallest ``v`` whose best ``k`` reaches ``fraction * c`` resolved positives.

    Exponential search then bisection on ``v``; if the evaluated points are not
    monotone in ``v`` the search falls back to a linear scan.
    """
    goal = target.fraction * float(model.c)
    lo_bound, hi_bound = target.v_range
    if target.k_range is not None:
        lo_bound = max(lo_bound, target.k_range[0])
    seen: Dict[int, Tuple[int, float]] = {}

    def best(v: int) -> Tuple[int, float]:
        if v not in seen:
            seen[v] = optimal_k(model, v, target)
        return seen[v]

    # exponential search for a feasible upper end
    lo, hi = lo_bound - 1, lo_bound
    while best(hi)[1] < goal:
        if hi >= hi_bound:
            raise Infeasible(f"target {goal:g} not reached for v <= {hi_bound}")
        lo, hi = hi, min(hi_bound, 2 * hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if best(mid)[1] >= goal:
            hi = mid
        else:
            lo = mid
    v_min = hi
    if not _monotone(seen):
        log.warning("resolved expectation not monotone in v for n=%s c=%s; scanning linearly",
                    model.n, model.c)
        v_min = next(v for v in range(lo_bound, hi + 1) if best(v)[1] >= goal)
    k_opt, resolved = best(v_min)
    n_bar = float(unresolved_negatives_asymptotic(model, DesignShape(v_min, k_opt)))
    return OptimizationResult(v_min, k_opt, resolved, n_bar, model.n * k_opt / v_min)


def _monotone(points: Dict[int, Tuple[int, float]]) -> bool:
    values = [points[v][1] for v in sorted(points)]
    return all(a <= b + 1e-12 for a, b in zip(values, values[1:]))


def log_grid(lo: float, hi: float, resolution: int) -> List[float]:
    return np.geomspace(lo, hi, resolution).tolist()


def _sweep_cell(args):
    n, c, fraction, method, k_range = args
    model = LibraryModel(n, c)
    res = min_pools(model, OptimizationTarget(fraction, method, k_range))
    return {"n": n, "c": c, "fraction": fraction, "v_min": res.v_min, "k_opt": res.k_opt,
            "resolved_exp": res.resolved, "unresolved_neg_exp": res.unresolved_negatives}


def sweep_grid(n_range: Tuple[float, float] = (1000, 100_000),
               c_range: Tuple[float, float] = (0.25, 16), fraction: float = 0.5,
               resolution: int | Tuple[int, int] = 5, method: str = "approx",
               k_range: Tuple[int, int] | None = None, workers: int = 1,
               n_values: Sequence[int] | None = None,
               c_values: Sequence[float] | None = None) -> List[dict]:
    """Minimum pools and best ``k`` over a logarithmic ``(n, c)`` grid.

    Rows come back in row-major order (``c`` outer, ``n`` inner) whatever the
    number of workers.
    """
    rn, rc = (resolution, resolution) if isinstance(resolution, int) else resolution
    ns = list(n_values) if n_values is not None else [int(round(x)) for x in log_grid(*n_range, rn)]
    cs = list(c_values) if c_values is not None else log_grid(*c_range, rc)
    cells = [(n, c, fraction, method, k_range) for c in cs for n in ns]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_cell, cells))
    return [_sweep_cell(cell) for cell in cells]


def write_sweep_csv(rows: Iterable[dict], stream=None) -> str:
    out = stream if stream is not None else io.StringIO()
    writer = csv.DictWriter(out, fieldnames=SWEEP_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: _fmt(row[key]) for key in SWEEP_HEADER})
    return out.getvalue() if stream is None else ""


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.10g}"
    return value
