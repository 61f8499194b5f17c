"""Monte Carlo simulation of pooled screens.

Ground truth follows the error-free categories: a negative clone is
*resolved* if one of its pools holds no positive clone; a positive clone is
*resolved* if one of its pools holds no other positive and no unresolved
negative. Observed (possibly erroneous) assay vectors only support the
two-way split computed by :func:`classify_observed`.

Replicate ``r`` of a simulation seeded with ``seed`` draws from
``SeedSequence(seed, spawn_key=(r,))`` so any replicate can be rerun alone.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence

import numpy as np
from numba import njit

from .design import PoolingDesign
from .metrics import LibraryModel, MetricsResult

RESOLVED_POSITIVE, UNRESOLVED_POSITIVE, RESOLVED_NEGATIVE, UNRESOLVED_NEGATIVE = range(4)
CATEGORIES = ("resolved_positive", "unresolved_positive", "resolved_negative",
              "unresolved_negative")


@dataclass(frozen=True)
class ErrorModel:
    """Independent per-pool flips: ``fp`` turns a negative pool positive, ``fn`` the reverse."""

    fp: float = 0.0
    fn: float = 0.0

    def __post_init__(self):
        for name in ("fp", "fn"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} rate must lie in [0, 1], got {rate}")

    @property
    def error_free(self) -> bool:
        return self.fp == 0.0 and self.fn == 0.0


@dataclass
class AssayOutcome:
    V: np.ndarray
    provenance: str = "simulated"

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=bool)

    @property
    def v(self) -> int:
        return len(self.V)

    def dumps(self) -> str:
        return "".join("1" if x else "0" for x in self.V) + "\n"

    @classmethod
    def loads(cls, text: str, provenance: str = "loaded") -> "AssayOutcome":
        body = "".join(line.strip() for line in text.splitlines()
                       if line.strip() and not line.lstrip().startswith("#"))
        if set(body) - {"0", "1"}:
            raise ValueError("assay vector must contain only 0 and 1")
        return cls(np.array([ch == "1" for ch in body], dtype=bool), provenance)


def replicate_rng(seed, replicate: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replicate,))))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def draw_positives(model: LibraryModel, seed=None) -> np.ndarray:
    """Sorted indices of positive clones, each positive with probability ``c/n``.

    Drawn as a binomial count followed by a uniform subset of that size,
    which has the same law as independent Bernoulli draws.
    """
    rng = _rng(seed)
    prob = float(model.prob)
    if prob <= 0.0:
        return np.zeros(0, dtype=np.int64)
    count = rng.binomial(model.n, prob)
    return np.sort(rng.choice(model.n, count, replace=False)).astype(np.int64)


def true_pool_states(design: PoolingDesign, positives) -> np.ndarray:
    positives = np.asarray(positives, dtype=np.int64)
    state = np.zeros(design.v, dtype=bool)
    if len(positives):
        state[_gather(design, positives)] = True
    return state


def assay_pools(design: PoolingDesign, positives, errors: ErrorModel | None = None,
                seed=None) -> AssayOutcome:
    """Pool results: OR of member positivity, then independent error flips."""
    state = true_pool_states(design, positives)
    if errors is not None and not errors.error_free:
        u = _rng(seed).random(design.v)
        state = np.where(state, u >= errors.fn, u < errors.fp)
    return AssayOutcome(state, "simulated")


def _gather(design: PoolingDesign, clones: np.ndarray) -> np.ndarray:
    """Concatenated pool lists of ``clones``."""
    if design.k is not None:
        return design.matrix[clones].ravel()
    if len(clones) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([design.pools_of(i) for i in clones])


class _Classifier:
    """Precomputed lookups that make one ground-truth classification cheap."""

    def __init__(self, design: PoolingDesign):
        self.design = design
        sizes = design.sizes
        self.orphans = np.flatnonzero(sizes == 0)
        owners = np.flatnonzero(sizes > 0)
        # every unresolved negative has its lowest-numbered pool positive
        anchor = design.indices[design.indptr[owners]]
        order = np.argsort(anchor, kind="stable")
        self.anchored = owners[order]
        self.anchor_ptr = np.zeros(design.v + 1, dtype=np.int64)
        self.anchor_ptr[1:] = np.cumsum(np.bincount(anchor, minlength=design.v))
        self.uniform = design.k is not None

    def unresolved_negatives(self, positives: np.ndarray, pos_count: np.ndarray) -> np.ndarray:
        d = self.design
        pos_pools = np.flatnonzero(pos_count)
        parts = [self.anchored[self.anchor_ptr[q]:self.anchor_ptr[q + 1]] for q in pos_pools]
        parts.append(self.orphans)
        cand = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        positive_pool = pos_count > 0
        if self.uniform:
            covered = positive_pool[d.matrix[cand]].all(axis=1) if d.k else \
                np.ones(len(cand), dtype=bool)
        else:
            covered = np.array([positive_pool[d.pools_of(i)].all() for i in cand], dtype=bool)
        cand = cand[covered]
        if len(positives):
            cand = cand[~np.isin(cand, positives)]
        return np.sort(cand)

    def classify(self, positives: np.ndarray):
        d = self.design
        pos_count = np.bincount(_gather(d, positives), minlength=d.v)
        unresolved = self.unresolved_negatives(positives, pos_count)
        un_count = np.bincount(_gather(d, unresolved), minlength=d.v)
        private = (pos_count == 1) & (un_count == 0)
        if self.uniform and d.k:
            resolved = private[d.matrix[positives]].any(axis=1)
        else:
            resolved = np.array([private[d.pools_of(i)].any() for i in positives], dtype=bool)
        return resolved, unresolved


@dataclass
class ClassificationReport:
    categories: np.ndarray
    counts: Dict[str, int]

    def clones(self, category: str) -> np.ndarray:
        return np.flatnonzero(self.categories == CATEGORIES.index(category))


def classify_truth(design: PoolingDesign, positives) -> ClassificationReport:
    """Assign every clone to one of the four error-free categories.

    Unresolved negatives are found first, since a positive clone counts as
    resolved only through a pool free of other positives and of them.
    """
    positives = np.unique(np.asarray(positives, dtype=np.int64))
    if len(positives) and (positives[0] < 0 or positives[-1] >= design.n):
        raise ValueError("positive clone index out of range")
    resolved, unresolved = _Classifier(design).classify(positives)
    cats = np.full(design.n, RESOLVED_NEGATIVE, dtype=np.int8)
    cats[unresolved] = UNRESOLVED_NEGATIVE
    cats[positives] = np.where(resolved, RESOLVED_POSITIVE, UNRESOLVED_POSITIVE)
    counts = dict(zip(CATEGORIES, np.bincount(cats, minlength=4).tolist()))
    return ClassificationReport(cats, counts)


@dataclass
class ObservedPartition:
    observed_negative: np.ndarray
    candidates: np.ndarray


def classify_observed(design: PoolingDesign, outcome: AssayOutcome) -> ObservedPartition:
    """Clones in some negative pool are observed negative; the rest are candidates."""
    if outcome.v != design.v:
        raise ValueError(f"assay has {outcome.v} pools, design has {design.v}")
    negative_pool = ~outcome.V
    hit = np.zeros(design.n, dtype=bool)
    np.logical_or.at(hit, design.clone_ids(), negative_pool[design.indices])
    return ObservedPartition(hit, np.flatnonzero(~hit))


# -- simulation ---------------------------------------------------------------


@dataclass
class SimulationResult:
    model: LibraryModel
    replicates: int
    counts: np.ndarray  # (replicates, 4) per-category counts
    positives: np.ndarray
    candidates: np.ndarray | None = None
    found: np.ndarray | None = None
    means: Dict[str, float] = field(init=False)
    stderrs: Dict[str, float] = field(init=False)

    def __post_init__(self):
        r = max(self.replicates, 1)
        mean = self.counts.sum(axis=0) / r
        sd = self.counts.std(axis=0, ddof=1) if self.replicates > 1 else np.zeros(4)
        self.means = dict(zip(CATEGORIES, mean.tolist()))
        self.stderrs = dict(zip(CATEGORIES, (sd / np.sqrt(r)).tolist()))

    @property
    def resolved_positives(self) -> float:
        return self.means["resolved_positive"]

    @property
    def unresolved_negatives(self) -> float:
        return self.means["unresolved_negative"]

    def metrics(self) -> MetricsResult:
        """Empirical analogue of the closed-form measures (``c`` from the model)."""
        c = float(self.model.c)
        return MetricsResult(self.model.n, c, self.unresolved_negatives,
                             c - self.resolved_positives, "simulation")

    def resolved_given_positives(self) -> np.ndarray:
        """``table[p, j]``: fraction of replicates with ``p`` positives of which ``j`` resolved."""
        p = self.positives
        j = self.counts[:, RESOLVED_POSITIVE]
        top = int(p.max()) if len(p) else 0
        table = np.zeros((top + 1, top + 1))
        np.add.at(table, (p, j), 1.0)
        rows = table.sum(axis=1, keepdims=True)
        return np.divide(table, rows, out=np.zeros_like(table), where=rows > 0)

    def report_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["category", "mean", "stderr"])
        for cat in CATEGORIES:
            writer.writerow([cat, f"{self.means[cat]:.10g}", f"{self.stderrs[cat]:.10g}"])
        if self.candidates is not None:
            r = max(self.replicates, 1)
            writer.writerow(["observed_candidates", f"{self.candidates.mean():.10g}",
                             f"{self.candidates.std(ddof=1) / np.sqrt(r) if r > 1 else 0:.10g}"])
            writer.writerow(["positives_among_candidates", f"{self.found.mean():.10g}",
                             f"{self.found.std(ddof=1) / np.sqrt(r) if r > 1 else 0:.10g}"])
        return out.getvalue()


DesignSource = PoolingDesign | Callable[[np.random.Generator], PoolingDesign]


def _run_block(source: DesignSource, model: LibraryModel, errors: ErrorModel | None,
               seed, start: int, stop: int):
    fixed = isinstance(source, PoolingDesign)
    classifier = _Classifier(source) if fixed else None
    m = stop - start
    counts = np.zeros((m, 4), dtype=np.int64)
    positives = np.zeros(m, dtype=np.int64)
    noisy = errors is not None and not errors.error_free
    candidates = np.zeros(m, dtype=np.int64) if noisy else None
    found = np.zeros(m, dtype=np.int64) if noisy else None
    for row, r in enumerate(range(start, stop)):
        rng = replicate_rng(seed, r)
        design = source if fixed else source(rng)
        clf = classifier if fixed else _Classifier(design)
        pos = draw_positives(model, rng)
        resolved, unresolved = clf.classify(pos)
        n_res = int(resolved.sum())
        counts[row] = (n_res, len(pos) - n_res, model.n - len(pos) - len(unresolved),
                       len(unresolved))
        positives[row] = len(pos)
        if noisy:
            outcome = assay_pools(design, pos, errors, rng)
            cand = classify_observed(design, outcome).candidates
            candidates[row] = len(cand)
            found[row] = np.isin(pos, cand).sum()
    return counts, positives, candidates, found


def simulate_metrics(source: DesignSource, model: LibraryModel, errors: ErrorModel | None = None,
                     replicates: int = 1000, seed=0, workers: int = 1) -> SimulationResult:
    """Average the ground-truth category counts over simulated screens.

    ``source`` is either a fixed design, reused by every replicate, or a
    callable ``rng -> design`` drawing a fresh design per replicate. When
    ``errors`` are given, each replicate also records how many clones remain
    candidates after the noisy assay and how many true positives are among
    them.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    if isinstance(source, PoolingDesign) and source.n != model.n:
        raise ValueError(f"design has {source.n} clones, model has {model.n}")
    bounds = np.linspace(0, replicates, max(1, workers) + 1).astype(int)
    blocks = list(zip(bounds[:-1], bounds[1:]))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, *zip(*[(source, model, errors, seed, a, b)
                                                      for a, b in blocks])))
    else:
        parts = [_run_block(source, model, errors, seed, a, b) for a, b in blocks]
    counts = np.concatenate([p[0] for p in parts])
    positives = np.concatenate([p[1] for p in parts])
    noisy = parts[0][2] is not None
    return SimulationResult(model, replicates, counts, positives,
                            np.concatenate([p[2] for p in parts]) if noisy else None,
                            np.concatenate([p[3] for p in parts]) if noisy else None)


# -- random k-sets ensemble ----------------------------------------------------


@njit(cache=True)
def _ensemble_block(rng, n, v, k, prob, counts, positives):
    perm = np.arange(v)
    cover = np.zeros(v, dtype=np.int64)
    neg_cover = np.zeros(v, dtype=np.int64)
    live = np.empty(v, dtype=np.int64)
    for r in range(counts.shape[0]):
        p = rng.binomial(n, prob)
        sets = np.empty((p, k), dtype=np.int64)
        for i in range(p):
            for t in range(k):
                j = t + rng.integers(0, v - t)
                perm[t], perm[j] = perm[j], perm[t]
                sets[i, t] = perm[t]
                cover[perm[t]] += 1
        x = 0
        for q in range(v):
            if cover[q] > 0:
                live[x] = q
                x += 1
        # each negative lies inside the positive pools with probability C(x,k)/C(v,k)
        inside = 1.0
        for m in range(k):
            inside *= max(x - m, 0) / (v - m)
        u = rng.binomial(n - p, inside) if inside > 0 else 0
        for _ in range(u):
            for t in range(k):
                j = t + rng.integers(0, x - t)
                live[t], live[j] = live[j], live[t]
                neg_cover[live[t]] += 1
        resolved = 0
        for i in range(p):
            for t in range(k):
                q = sets[i, t]
                if cover[q] == 1 and neg_cover[q] == 0:
                    resolved += 1
                    break
        counts[r, 0] = resolved
        counts[r, 1] = p - resolved
        counts[r, 2] = n - p - u
        counts[r, 3] = u
        positives[r] = p
        cover[:] = 0
        neg_cover[:] = 0


def simulate_random_ksets(model: LibraryModel, shape, replicates: int = 100_000, seed=0,
                          block: int = 10_000) -> SimulationResult:
    """Category counts over the random k-sets ensemble, a fresh design per replicate.

    Only the positives' k-sets are drawn explicitly. Negatives enter through
    the binomial number lying inside the positive pools, each then uniform
    over the k-subsets of those pools, which is the same joint law as drawing
    all ``n`` k-sets at far lower cost. Block ``b`` of ``block`` replicates
    uses the stream of :func:`replicate_rng` with index ``b``.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    counts = np.zeros((replicates, 4), dtype=np.int64)
    positives = np.zeros(replicates, dtype=np.int64)
    prob = float(model.prob)
    for b, start in enumerate(range(0, replicates, block)):
        stop = min(replicates, start + block)
        _ensemble_block(replicate_rng(seed, b), model.n, shape.v, shape.k, prob,
                        counts[start:stop], positives[start:stop])
    return SimulationResult(model, replicates, counts, positives)
