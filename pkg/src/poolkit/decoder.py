"""Posterior probability that each clone is positive, given noisy pool assays.

Likelihood of an assay vector ``V`` under a hypothesized positive set ``P``
with independent false-positive rate ``fp`` and false-negative rate ``fn``,
where ``U`` is the set of pools containing some clone of ``P``::

    Pr(V | P) = fp^a (1-fp)^(v-|U|-a) fn^b (1-fn)^(|U|-b)

``a`` counts positive pools outside ``U`` and ``b`` negative pools inside it.
The prior makes each clone positive independently with probability ``c/n``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, List

import numpy as np
from scipy.special import logsumexp, xlog1py, xlogy

from .design import PoolingDesign
from .metrics import LibraryModel
from .screening import AssayOutcome, ErrorModel

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

MAX_EXACT_CLONES = 20
RATE_FLOOR = 1e-12


class NonMixingWarning(RuntimeWarning):
    pass


def _vector(V) -> np.ndarray:
    return V.V if isinstance(V, AssayOutcome) else np.asarray(V, dtype=bool)


@dataclass
class PositiveSetHypothesis:
    design: PoolingDesign
    clones: np.ndarray
    upsilon: np.ndarray = field(init=False)

    def __post_init__(self):
        self.clones = np.unique(np.asarray(self.clones, dtype=np.int64))
        self.upsilon = np.zeros(self.design.v, dtype=bool)
        for i in self.clones:
            self.upsilon[self.design.pools_of(int(i))] = True

    def counts(self, V) -> tuple[int, int]:
        """``(positive pools outside U, negative pools inside U)``."""
        V = _vector(V)
        return int(np.sum(V & ~self.upsilon)), int(np.sum(~V & self.upsilon))


def _loglik_from_counts(v, size_u, false_pos, false_neg, errors: ErrorModel):
    fp, fn = errors.fp, errors.fn
    return (xlogy(false_pos, fp) + xlog1py(v - size_u - false_pos, -fp)
            + xlogy(false_neg, fn) + xlog1py(size_u - false_neg, -fn))


def log_likelihood(V, P: PositiveSetHypothesis, errors: ErrorModel) -> float:
    """``log Pr(V | P)``; zero rates give exact ``-inf`` for impossible data."""
    V = _vector(V)
    if len(V) != P.design.v:
        raise ValueError("assay length does not match the design")
    false_pos, false_neg = P.counts(V)
    return float(_loglik_from_counts(len(V), int(P.upsilon.sum()), false_pos, false_neg, errors))


# -- ranking container ---------------------------------------------------------


@dataclass
class PosteriorRanking:
    posterior: np.ndarray
    stderr: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    order: np.ndarray = field(init=False)
    rank: np.ndarray = field(init=False)

    def __post_init__(self):
        self.posterior = np.asarray(self.posterior, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        idx = np.arange(len(self.posterior))
        # highest posterior first, ties by clone index
        self.order = np.lexsort((idx, -self.posterior))
        self.rank = np.empty_like(idx)
        self.rank[self.order] = idx + 1

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["clone_id", "posterior", "stderr", "rank"])
        for i in range(len(self.posterior)):
            writer.writerow([i, f"{self.posterior[i]:.10g}", f"{self.stderr[i]:.10g}",
                             int(self.rank[i])])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PosteriorRanking":
        rows = list(csv.DictReader(io.StringIO(text)))
        rows.sort(key=lambda r: int(r["clone_id"]))
        return cls(np.array([float(r["posterior"]) for r in rows]),
                   np.array([float(r["stderr"]) for r in rows]))


def rank_for_confirmation(posteriors: PosteriorRanking, budget: int) -> List[int]:
    """The ``budget`` clones most likely to be positive, best first."""
    n = len(posteriors.posterior)
    if not 0 <= budget <= n:
        raise ValueError(f"budget must lie in [0, {n}], got {budget}")
    return posteriors.order[:budget].tolist()


# -- exact enumeration ----------------------------------------------------------


def _log_prior(model: LibraryModel):
    pi = float(model.prob)
    return math.log(pi), math.log1p(-pi)


def posterior_exact(design: PoolingDesign, V, errors: ErrorModel,
                    model: LibraryModel) -> PosteriorRanking:
    """Exact marginals by summing over all ``2**n`` positive sets (``n <= 20``)."""
    n, v = design.n, design.v
    if n > MAX_EXACT_CLONES:
        raise ValueError(f"exact enumeration is limited to {MAX_EXACT_CLONES} clones "
                         f"(got {n}); use posterior_gibbs")
    V = _vector(V)
    if len(V) != v:
        raise ValueError("assay length does not match the design")
    words = (v + 63) // 64
    clone_masks = np.zeros((n, words), dtype=np.uint64)
    for i in range(n):
        for q in design.pools_of(i):
            clone_masks[i, q // 64] |= np.uint64(1) << np.uint64(q % 64)
    vmask = np.zeros(words, dtype=np.uint64)
    for q in np.flatnonzero(V):
        vmask[q // 64] |= np.uint64(1) << np.uint64(q % 64)
    union = np.zeros((1 << n, words), dtype=np.uint64)
    for b in range(n):
        half = 1 << b
        union[half:2 * half] = union[:half] | clone_masks[b]
    size_u = np.bitwise_count(union).sum(axis=1).astype(np.int64)
    inside_pos = np.bitwise_count(union & vmask).sum(axis=1).astype(np.int64)
    false_neg = size_u - inside_pos
    false_pos = int(V.sum()) - inside_pos
    ll = _loglik_from_counts(v, size_u, false_pos, false_neg, errors)
    members = np.bitwise_count(np.arange(1 << n, dtype=np.uint64)).astype(np.int64)
    lp_on, lp_off = _log_prior(model)
    logw = ll + members * lp_on + (n - members) * lp_off
    if not np.isfinite(logw).any():
        raise ValueError("the assay vector has probability zero under every positive set")
    total = logsumexp(logw)
    w = np.exp(logw - total)
    post = np.array([w.reshape(-1, 2, 1 << i)[:, 1, :].sum() for i in range(n)])
    return PosteriorRanking(np.clip(post, 0.0, 1.0), np.zeros(n),
                            {"method": "exact", "hypotheses": 1 << n})


# -- Gibbs sampler ------------------------------------------------------------


@njit(cache=True)
def _gibbs_block(indptr, indices, vpos, state, cover, gain_pos, gain_neg, prior_odds,
                 uniforms, counts, record):
    n = len(state)
    for s in range(uniforms.shape[0]):
        for i in range(n):
            delta = prior_odds
            on = state[i]
            for e in range(indptr[i], indptr[i + 1]):
                q = indices[e]
                if cover[q] - on == 0:
                    delta += gain_pos if vpos[q] else gain_neg
            if delta >= 0:
                prob = 1.0 / (1.0 + math.exp(-delta))
            else:
                ex = math.exp(delta)
                prob = ex / (1.0 + ex)
            new = uniforms[s, i] < prob
            if new != on:
                step = 1 if new else -1
                for e in range(indptr[i], indptr[i + 1]):
                    cover[indices[e]] += step
                state[i] = new
            if record and new:
                counts[i] += 1


def posterior_gibbs(design: PoolingDesign, V, errors: ErrorModel, model: LibraryModel,
                    sweeps: int = 2000, burn_in: int = 200, chains: int = 4, seed=0,
                    batches: int = 20, spread_warning: float = 0.2,
                    block: int = 64) -> PosteriorRanking:
    """Marginal posteriors from single-site Gibbs sampling over the positive set.

    Each sweep visits clones in index order and redraws clone ``i`` from its
    conditional given the others, which depends only on which of its pools
    are covered by other current positives. Chains start from a prior draw;
    marginals are post-burn-in inclusion frequencies pooled over chains, with
    standard errors from batch means. Rates of exactly 0 or 1 are moved
    ``1e-12`` inside the interval so the chain stays irreducible.
    """
    if sweeps <= burn_in:
        raise ValueError("sweeps must exceed burn_in")
    if chains < 1:
        raise ValueError("need at least one chain")
    V = _vector(V)
    if len(V) != design.v:
        raise ValueError("assay length does not match the design")
    fp = min(max(errors.fp, RATE_FLOOR), 1 - RATE_FLOOR)
    fn = min(max(errors.fn, RATE_FLOOR), 1 - RATE_FLOOR)
    # log-ratio for covering a previously uncovered pool
    gain_pos = math.log1p(-fn) - math.log(fp)
    gain_neg = math.log(fn) - math.log1p(-fp)
    pi = float(model.prob)
    prior_odds = math.log(pi) - math.log1p(-pi)
    n = design.n
    kept = sweeps - burn_in
    batches = max(1, min(batches, kept))
    edges = np.linspace(0, kept, batches + 1).astype(int)
    batch_means = np.zeros((chains, batches, n))
    for ch, child in enumerate(np.random.SeedSequence(seed).spawn(chains)):
        rng = np.random.default_rng(child)
        state = rng.random(n) < pi
        cover = np.bincount(design.indices[np.repeat(state, design.sizes)],
                            minlength=design.v).astype(np.int64)
        counts = np.zeros(n, dtype=np.int64)
        schedule = [(0, burn_in, False)] + [(burn_in + edges[b], burn_in + edges[b + 1], True)
                                            for b in range(batches)]
        for b, (start, stop, record) in enumerate(schedule):
            counts[:] = 0
            for lo in range(start, stop, block):
                hi = min(stop, lo + block)
                _gibbs_block(design.indptr, design.indices, V, state, cover, gain_pos, gain_neg,
                             prior_odds, rng.random((hi - lo, n)), counts, record)
            if record:
                batch_means[ch, b - 1] = counts / max(stop - start, 1)
    weights = np.diff(edges) / kept
    chain_means = np.tensordot(batch_means, weights, axes=([1], [0]))
    post = chain_means.mean(axis=0)
    flat = batch_means.reshape(chains * batches, n)
    stderr = flat.std(axis=0, ddof=1) / math.sqrt(flat.shape[0]) if flat.shape[0] > 1 \
        else np.zeros(n)
    spread = float((chain_means.max(axis=0) - chain_means.min(axis=0)).max()) if n else 0.0
    if chains > 1 and spread > spread_warning:
        warnings.warn(f"chains disagree by up to {spread:.3f} on a marginal; "
                      "run more sweeps", NonMixingWarning, stacklevel=2)
    return PosteriorRanking(post, stderr, {"method": "gibbs", "sweeps": sweeps,
                                           "burn_in": burn_in, "chains": chains,
                                           "seed": seed, "max_chain_spread": spread})


# -- naive subset sampling (reference only) ---------------------------------------


def posterior_subset_sampling(design: PoolingDesign, V, errors: ErrorModel,
                              model: LibraryModel, samples: int = 10_000,
                              seed=0) -> PosteriorRanking:
    """Reference estimator: prior-drawn subsets with each clone forced in and out.

    For every sampled subset ``S`` of the other clones, ``Pr(V | S + i)`` and
    ``Pr(V | S - i)`` estimate the two joint probabilities in Bayes' rule.
    Cost is ``samples * n`` likelihoods, so this is for small checks only.
    """
    V = _vector(V)
    n, v = design.n, design.v
    rng = np.random.default_rng(seed)
    pi = float(model.prob)
    lp_on, lp_off = _log_prior(model)
    inc = design.incidence()
    vsum = int(V.sum())
    log_num = np.full((samples, n), -np.inf)
    log_den = np.full((samples, n), -np.inf)
    for s in range(samples):
        S = rng.random(n) < pi
        cover = inc[S].sum(axis=0)
        for i in range(n):
            own = inc[i]
            others = cover - (own if S[i] else 0)
            for with_i, out in ((True, log_num), (False, log_den)):
                u = (others > 0) | own if with_i else others > 0
                inside_pos = int(np.sum(u & V))
                size_u = int(u.sum())
                out[s, i] = _loglik_from_counts(v, size_u, vsum - inside_pos,
                                                size_u - inside_pos, errors)
    num = logsumexp(log_num, axis=0) + lp_on
    den = logsumexp(log_den, axis=0) + lp_off
    post = 1.0 / (1.0 + np.exp(den - num))
    return PosteriorRanking(post, np.zeros(n), {"method": "subset_sampling", "samples": samples})
