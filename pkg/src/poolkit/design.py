"""Pooling designs: construction, validation and the plain-text design file.

A design assigns each of ``n`` clones to a sorted set of pool indices in
``range(v)``. It is stored in compressed-row form (``indptr``/``indices``)
so that large designs stay cheap to simulate.

Randomness always comes from ``numpy.random.default_rng(seed)`` (PCG64), so
a given seed and parameter set reproduces a design exactly on any platform.
"""

from __future__ import annotations

import io
import itertools
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

KINDS = ("random_ksets", "ksets_packing", "row_column", "cubic", "explicit")


class GenerationExhausted(RuntimeError):
    """A constrained generator used up its retry budget."""


class DesignFormatError(ValueError):
    pass


@dataclass(eq=False)
class PoolingDesign:
    n: int
    v: int
    indptr: np.ndarray
    indices: np.ndarray
    kind: str = "explicit"
    t: int | None = None
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.kind not in KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}")
        if len(self.indptr) != self.n + 1 or self.indptr[0] != 0 \
                or self.indptr[-1] != len(self.indices):
            raise ValueError("indptr does not match n and indices")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.v):
            raise ValueError(f"pool indices must lie in [0, {self.v})")
        if self.kind == "explicit" and self.t is not None and self.t == self.k:
            self.t = None

    # -- construction ---------------------------------------------------

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], v: int, kind: str = "explicit",
                  t: int | None = None, meta: Dict[str, str] | None = None) -> "PoolingDesign":
        rows = [sorted(set(int(q) for q in s)) for s in sets]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.fromiter(itertools.chain.from_iterable(rows), dtype=np.int64,
                              count=int(indptr[-1]))
        return cls(len(rows), v, indptr, indices, kind, t, dict(meta or {}))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, v: int, kind: str = "explicit",
                    t: int | None = None, meta: Dict[str, str] | None = None) -> "PoolingDesign":
        """Build from an ``(n, k)`` array of distinct pool indices per row."""
        matrix = np.sort(np.asarray(matrix, dtype=np.int64), axis=1)
        n, k = matrix.shape
        if k > 1 and np.any(matrix[:, 1:] == matrix[:, :-1]):
            raise ValueError("a clone lists the same pool twice")
        return cls(n, v, np.arange(n + 1, dtype=np.int64) * k, matrix.ravel(), kind, t,
                   dict(meta or {}))

    # -- views ----------------------------------------------------------

    @property
    def sizes(self) -> np.ndarray:
        """Number of pools each clone occurs in."""
        return np.diff(self.indptr)

    @property
    def k(self) -> int | None:
        """Common number of pools per clone, or None if clones differ."""
        sizes = self.sizes
        if len(sizes) == 0:
            return None
        return int(sizes[0]) if np.all(sizes == sizes[0]) else None

    @property
    def matrix(self) -> np.ndarray:
        k = self.k
        if k is None:
            raise ValueError("design is not k-uniform")
        return self.indices.reshape(self.n, k)

    def pools_of(self, clone: int) -> np.ndarray:
        return self.indices[self.indptr[clone]:self.indptr[clone + 1]]

    def sets(self) -> List[Tuple[int, ...]]:
        return [tuple(self.pools_of(i).tolist()) for i in range(self.n)]

    def clone_ids(self) -> np.ndarray:
        """Clone index for every entry of ``indices``."""
        return np.repeat(np.arange(self.n), self.sizes)

    def pool_sizes(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.v)

    def pool_members(self) -> Tuple[np.ndarray, np.ndarray]:
        """CSR of the transpose: ``members[ptr[q]:ptr[q+1]]`` are the clones in pool q."""
        order = np.argsort(self.indices, kind="stable")
        members = self.clone_ids()[order]
        ptr = np.zeros(self.v + 1, dtype=np.int64)
        ptr[1:] = np.cumsum(self.pool_sizes())
        return ptr, members

    def incidence(self) -> np.ndarray:
        """Dense boolean clone-by-pool matrix."""
        out = np.zeros((self.n, self.v), dtype=bool)
        out[self.clone_ids(), self.indices] = True
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoolingDesign):
            return NotImplemented
        return (self.n == other.n and self.v == other.v and self.kind == other.kind
                and self.t == other.t and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __repr__(self) -> str:
        return f"PoolingDesign(kind={self.kind!r}, n={self.n}, v={self.v}, k={self.k}, t={self.t})"


# -- random k-sets ------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_ksets_matrix(n: int, v: int, k: int, rng: np.random.Generator,
                        chunk: int = 1 << 16) -> np.ndarray:
    """``(n, k)`` sorted rows, each a uniform k-subset of ``range(v)``.

    Each row takes the ``k`` smallest of ``v`` uniform keys.
    """
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        keys = rng.random((stop - start, v))
        out[start:stop] = np.sort(np.argpartition(keys, k - 1, axis=1)[:, :k], axis=1) \
            if k < v else np.arange(v)
    return out


def generate_random_ksets(n: int, v: int, k: int, seed=None) -> PoolingDesign:
    """Every clone in an independent, uniformly random k-subset of the v pools."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not 1 <= k <= v:
        raise ValueError(f"need 1 <= k <= v, got k={k}, v={v}")
    rng = _rng(seed)
    return PoolingDesign.from_matrix(random_ksets_matrix(n, v, k, rng).reshape(n, k), v,
                                     "random_ksets", k)


# -- k-sets packings ----------------------------------------------------------


@dataclass(frozen=True)
class PackingConstraints:
    """Pairwise intersection bound ``t`` and an optional pool-size range."""

    t: int
    balance: Tuple[int, int] | None = None
    max_retries: int = 10_000

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("t must be nonnegative")
        if self.balance is not None and self.balance[0] > self.balance[1]:
            raise ValueError(f"empty balance range {self.balance}")
        if self.max_retries < 1:
            raise ValueError("max_retries must be positive")

    def check_feasible(self, n: int, v: int, k: int) -> None:
        if self.t > k:
            raise ValueError(f"t={self.t} exceeds k={k}")
        if self.balance is not None:
            lo, hi = self.balance
            mean = n * k / v
            if not (lo <= math.floor(mean) <= hi or lo <= math.ceil(mean) <= hi):
                raise ValueError(f"balance range {self.balance} cannot hold mean pool size {mean:.2f}")


class _SubsetIndex:
    """Owner of every (t+1)-subset of the accepted k-sets.

    Two k-sets intersect in more than t pools exactly when they share a
    (t+1)-subset.
    """

    def __init__(self, t: int):
        self.m = t + 1
        self.owner: Dict[Tuple[int, ...], int] = {}

    def subsets(self, pools: Sequence[int]):
        return itertools.combinations(pools, self.m)

    def conflicts(self, pools: Sequence[int], ignore: int | None = None) -> bool:
        return any(self.owner.get(s, ignore) != ignore for s in self.subsets(pools))

    def add(self, pools: Sequence[int], clone: int) -> None:
        for s in self.subsets(pools):
            self.owner[s] = clone

    def remove(self, pools: Sequence[int]) -> None:
        for s in self.subsets(pools):
            del self.owner[s]


def generate_ksets_packing(n: int, v: int, k: int, constraints: PackingConstraints,
                           seed=None) -> PoolingDesign:
    """Random k-sets subject to ``|A & B| <= t`` for every pair of clones.

    Clones are drawn in turn; a candidate k-set is discarded if it shares more
    than ``t`` pools with any earlier clone. When a balance range is given,
    clones are then moved one pool at a time from the fullest pool to the
    emptiest until every pool size is in range, each move respecting ``t``.
    Raises :class:`GenerationExhausted` when a clone cannot be placed within
    ``max_retries`` draws or the balancing stalls.
    """
    if not 1 <= k <= v:
        raise ValueError(f"need 1 <= k <= v, got k={k}, v={v}")
    constraints.check_feasible(n, v, k)
    rng = _rng(seed)
    t = constraints.t
    index = _SubsetIndex(t) if t < k else None
    sets: List[Tuple[int, ...]] = []
    for clone in range(n):
        for _ in range(constraints.max_retries):
            cand = tuple(sorted(rng.choice(v, k, replace=False).tolist()))
            if index is None or not index.conflicts(cand):
                break
        else:
            raise GenerationExhausted(
                f"could not place clone {clone} of {n} with t={t} after "
                f"{constraints.max_retries} draws")
        if index is not None:
            index.add(cand, clone)
        sets.append(cand)
    if constraints.balance is not None:
        _balance(sets, v, constraints, index, rng)
    return PoolingDesign.from_sets(sets, v, "ksets_packing" if t < k else "random_ksets", t)


def _balance(sets: List[Tuple[int, ...]], v: int, constraints: PackingConstraints,
             index: _SubsetIndex | None, rng: np.random.Generator) -> None:
    lo, hi = constraints.balance
    members: List[set] = [set() for _ in range(v)]
    for clone, s in enumerate(sets):
        for q in s:
            members[q].add(clone)
    for _ in range(constraints.max_retries):
        sizes = np.array([len(m) for m in members])
        if sizes.min() >= lo and sizes.max() <= hi:
            return
        if sizes.max() > hi:
            sources = [int(np.argmax(sizes))]
            targets = np.argsort(sizes, kind="stable").tolist()
        else:
            targets = [int(np.argmin(sizes))]
            sources = np.argsort(-sizes, kind="stable").tolist()
        if not _move_one(sets, members, sources, targets, sizes, index, rng):
            break
    raise GenerationExhausted(f"could not balance pool sizes into {constraints.balance}")


def _move_one(sets, members, sources, targets, sizes, index, rng) -> bool:
    for a in sources:
        for b in targets:
            if a == b or sizes[b] + 1 > sizes[a] - 1:
                continue
            clones = sorted(members[a] - members[b])
            for clone in rng.permutation(clones).tolist():
                old = sets[clone]
                new = tuple(sorted(set(old) - {a} | {b}))
                if index is not None:
                    index.remove(old)
                    if index.conflicts(new):
                        index.add(old, clone)
                        continue
                    index.add(new, clone)
                sets[clone] = new
                members[a].discard(clone)
                members[b].add(clone)
                return True
    return False


# -- comparison designs -------------------------------------------------------


def generate_row_column(lots: int, dishes_per_lot: int | Sequence[int] = 8, rows: int = 8,
                        cols: int = 12, include_dish_pools: bool = True) -> PoolingDesign:
    """Row, column and whole-dish pools, built separately for each lot.

    Within a lot, row pool ``r`` holds row ``r`` of every dish and column pool
    ``c`` holds column ``c`` of every dish; each dish also forms its own pool.
    Clones are numbered lot, dish, row, column (row-major within a dish).
    Pools of a lot are numbered rows, then columns, then dishes.
    """
    dishes = [dishes_per_lot] * lots if isinstance(dishes_per_lot, int) else list(dishes_per_lot)
    if lots < 1 or len(dishes) != lots or min(dishes) < 1 or rows < 1 or cols < 1:
        raise ValueError("row-column dimensions must be positive")
    blocks, offset = [], 0
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    r, c = r.ravel(), c.ravel()
    for d in dishes:
        for dish in range(d):
            cols_ = [offset + r, offset + rows + c]
            if include_dish_pools:
                cols_.append(np.full(rows * cols, offset + rows + cols + dish))
            blocks.append(np.stack(cols_, axis=1))
        offset += rows + cols + (d if include_dish_pools else 0)
    meta = {"rows": str(rows), "cols": str(cols), "dishes": ",".join(map(str, dishes))}
    return PoolingDesign.from_matrix(np.concatenate(blocks), offset, "row_column", None, meta)


def invertible_affine_maps(side: int, count: int, rng: np.random.Generator):
    """``count`` random affine maps ``x -> A x + b (mod side)`` with A invertible."""
    maps = []
    while len(maps) < count:
        A = rng.integers(0, side, (3, 3))
        det = int(round(np.linalg.det(A)))
        if math.gcd(det % side, side) == 1:
            maps.append((A, rng.integers(0, side, 3)))
    return maps


def generate_cubic(n: int, side: int = 43, configurations: int = 2, seed=None) -> PoolingDesign:
    """Clones on random sites of a ``side**3`` lattice, one pool per coordinate value.

    The first configuration uses the sampled lattice coordinates directly;
    each further configuration re-places the clones by a seeded invertible
    affine map modulo ``side``. Every configuration contributes ``3 * side``
    pools and puts each clone in exactly three of them. The maps are recorded
    in ``design.meta``.
    """
    if side < 1 or configurations < 1:
        raise ValueError("side and configurations must be positive")
    if n > side**3:
        raise ValueError(f"n={n} exceeds the {side**3} lattice sites")
    rng = _rng(seed)
    sites = rng.choice(side**3, n, replace=False)
    coords = np.stack([sites // (side * side), (sites // side) % side, sites % side], axis=1)
    maps = [(np.eye(3, dtype=np.int64), np.zeros(3, dtype=np.int64))]
    maps += invertible_affine_maps(side, configurations - 1, rng)
    blocks = []
    for cfg, (A, b) in enumerate(maps):
        placed = (coords @ A.T + b) % side
        blocks.append(placed + side * np.arange(3) + 3 * side * cfg)
    meta = {f"map{cfg}": " ".join(map(str, np.concatenate([A.ravel(), b]).tolist()))
            for cfg, (A, b) in enumerate(maps)}
    meta["side"] = str(side)
    return PoolingDesign.from_matrix(np.concatenate(blocks, axis=1), 3 * side * configurations,
                                     "cubic", None, meta)


# -- validation ---------------------------------------------------------------


@dataclass
class ValidationReport:
    n: int
    v: int
    k: int | None
    k_uniform: bool
    duplicate_groups: List[List[int]]
    max_intersection: int | None
    pool_size_histogram: Dict[int, int]
    problems: List[str]

    @property
    def ok(self) -> bool:
        return not self.problems

    @property
    def duplicates(self) -> int:
        return sum(len(g) - 1 for g in self.duplicate_groups)


def _encode(subsets: np.ndarray, v: int) -> np.ndarray:
    code = np.zeros(subsets.shape[:-1], dtype=np.int64)
    for col in range(subsets.shape[-1]):
        code = code * v + subsets[..., col]
    return code


def _has_shared_subset(design: PoolingDesign, m: int) -> bool:
    if design.k is not None and m * math.log2(max(design.v, 2)) < 62:
        combos = np.array(list(itertools.combinations(range(design.k), m)))
        codes = _encode(design.matrix[:, combos], design.v).ravel()
        return len(np.unique(codes)) < len(codes)
    seen = set()
    for s in design.sets():
        for sub in itertools.combinations(s, m):
            if sub in seen:
                return True
            seen.add(sub)
    return False


def max_pairwise_intersection(design: PoolingDesign) -> int | None:
    """Largest number of pools shared by two distinct clones (None if n < 2)."""
    if design.n < 2:
        return None
    largest = int(design.sizes.max())
    m = 0
    while m < largest and _has_shared_subset(design, m + 1):
        m += 1
    return m


def duplicate_groups(design: PoolingDesign) -> List[List[int]]:
    groups: Dict[Tuple[int, ...], List[int]] = {}
    for clone, s in enumerate(design.sets()):
        groups.setdefault(s, []).append(clone)
    return [g for g in groups.values() if len(g) > 1]


def validate(design: PoolingDesign, expected: PackingConstraints | None = None,
             k: int | None = None) -> ValidationReport:
    """Check a design and summarize its structure; never raises."""
    problems = []
    size_hist = Counter(design.pool_sizes().tolist())
    uniform_k = design.k
    if k is not None and uniform_k != k:
        problems.append(f"expected every clone in {k} pools")
    if design.kind in ("random_ksets", "ksets_packing") and uniform_k is None and design.n:
        problems.append("k-sets design is not k-uniform")
    dups = duplicate_groups(design)
    if dups:
        problems.append(f"{sum(len(g) - 1 for g in dups)} duplicate clone set(s)")
    inter = max_pairwise_intersection(design)
    bound = expected.t if expected is not None else (
        design.t if design.kind == "ksets_packing" else None)
    if bound is not None and inter is not None and inter > bound:
        problems.append(f"two clones share {inter} pools, above the bound t={bound}")
    if expected is not None and expected.balance is not None and design.n:
        lo, hi = expected.balance
        sizes = design.pool_sizes()
        if sizes.min() < lo or sizes.max() > hi:
            problems.append(f"pool sizes {sizes.min()}..{sizes.max()} outside {lo}..{hi}")
    return ValidationReport(design.n, design.v, uniform_k, uniform_k is not None or design.n == 0,
                            dups, inter, dict(sorted(size_hist.items())), problems)


# -- design file --------------------------------------------------------------


def _header_t(design: PoolingDesign) -> int:
    if design.kind in ("random_ksets", "ksets_packing") and design.t is not None:
        return design.t
    if design.kind == "explicit" and design.k is not None:
        return design.t if design.t is not None else design.k
    return -1


def dumps(design: PoolingDesign) -> str:
    """Text form: ``n v k t`` then one line of sorted pool indices per clone.

    ``k`` is -1 when clones occur in different numbers of pools; ``t`` is the
    intersection bound (``k`` when unconstrained) or -1 for designs outside
    the k-sets family. The kind and any metadata travel in ``#`` comments.
    """
    out = io.StringIO()
    out.write(f"# kind: {design.kind}\n")
    for key, value in design.meta.items():
        out.write(f"# meta {key}: {value}\n")
    k = design.k if design.k is not None else -1
    out.write(f"{design.n} {design.v} {k} {_header_t(design)}\n")
    for i in range(design.n):
        out.write(" ".join(map(str, design.pools_of(i).tolist())))
        out.write("\n")
    return out.getvalue()


def loads(text: str) -> PoolingDesign:
    kind, meta, header, rows = None, {}, None, []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if body.startswith("kind:"):
                kind = body[5:].strip()
            elif body.startswith("meta "):
                key, _, value = body[5:].partition(":")
                meta[key.strip()] = value.strip()
            continue
        if header is None:
            if not stripped:
                continue
            try:
                header = tuple(int(x) for x in stripped.split())
            except ValueError:
                raise DesignFormatError(f"bad header line {line!r}") from None
            if len(header) != 4:
                raise DesignFormatError(f"header must be 'n v k t', got {line!r}")
            continue
        rows.append(stripped)
    if header is None:
        raise DesignFormatError("missing header")
    n, v, k, t = header
    if len(rows) > n and all(not r for r in rows[n:]):
        rows = rows[:n]
    if len(rows) != n:
        raise DesignFormatError(f"expected {n} clone lines, found {len(rows)}")
    try:
        sets = [[int(x) for x in r.split()] for r in rows]
    except ValueError as exc:
        raise DesignFormatError(str(exc)) from None
    if any(sorted(set(s)) != s for s in sets):
        raise DesignFormatError("pool indices must be strictly increasing on each line")
    if k >= 0 and any(len(s) != k for s in sets):
        raise DesignFormatError(f"header says k={k} but a clone line disagrees")
    if kind is None:
        kind = "explicit" if t < 0 or k < 0 else ("random_ksets" if t >= k else "ksets_packing")
    design_t = t if kind in ("random_ksets", "ksets_packing", "explicit") and t >= 0 else None
    try:
        return PoolingDesign.from_sets(sets, v, kind, design_t, meta)
    except ValueError as exc:
        raise DesignFormatError(str(exc)) from None


def write_design(design: PoolingDesign, path: str | os.PathLike) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(design))


def read_design(path: str | os.PathLike) -> PoolingDesign:
    with open(path) as fh:
        return loads(fh.read())
