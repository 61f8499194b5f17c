"""Well-to-pool transfer lists for building the pools of a design by robot."""

from __future__ import annotations

import csv
import io
import string
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .design import PoolingDesign

DEFAULT_VOLUME_UL = 400.0
TRANSFER_HEADER = ["source_plate", "source_well", "dest_pool", "volume_ul"]


@dataclass(frozen=True)
class PlateLayout:
    """Clones fill plates in row-major order, well ``A1`` first.

    ``plates=None`` allows as many plates as needed.
    """

    rows: int = 8
    cols: int = 12
    plates: int | None = None

    def __post_init__(self):
        if not 1 <= self.rows <= 26 or self.cols < 1:
            raise ValueError(f"bad plate geometry {self.rows}x{self.cols}")
        if self.plates is not None and self.plates < 0:
            raise ValueError("plate count must be nonnegative")

    @property
    def wells(self) -> int:
        return self.rows * self.cols

    @property
    def capacity(self) -> float:
        return float("inf") if self.plates is None else self.plates * self.wells

    def well_name(self, index: int) -> str:
        r, c = divmod(index, self.cols)
        return f"{string.ascii_uppercase[r]}{c + 1}"

    def well_index(self, name: str) -> int:
        r = string.ascii_uppercase.index(name[0].upper())
        c = int(name[1:]) - 1
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise ValueError(f"well {name!r} is outside a {self.rows}x{self.cols} plate")
        return r * self.cols + c

    def location(self, clone: int) -> tuple[int, str]:
        """``(plate, well)`` of a clone; plates are numbered from 1."""
        plate, well = divmod(clone, self.wells)
        return plate + 1, self.well_name(well)

    def clone_at(self, plate: int, well: str) -> int:
        return (plate - 1) * self.wells + self.well_index(well)


@dataclass
class TransferList:
    source_plate: np.ndarray
    source_well: List[str]
    dest_pool: np.ndarray
    volume_ul: np.ndarray
    layout: PlateLayout = field(default_factory=PlateLayout)
    n: int = 0
    v: int = 0

    def __len__(self) -> int:
        return len(self.dest_pool)

    def records(self):
        for i in range(len(self)):
            yield (int(self.source_plate[i]), self.source_well[i], int(self.dest_pool[i]),
                   float(self.volume_ul[i]))

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRANSFER_HEADER)
        for plate, well, pool, vol in self.records():
            writer.writerow([plate, well, pool, f"{vol:g}"])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, layout: PlateLayout | None = None, n: int | None = None,
                 v: int | None = None) -> "TransferList":
        layout = layout or PlateLayout()
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and list(rows[0]) != TRANSFER_HEADER:
            raise ValueError(f"expected header {TRANSFER_HEADER}")
        plates = np.array([int(r["source_plate"]) for r in rows], dtype=np.int64)
        wells = [r["source_well"] for r in rows]
        pools = np.array([int(r["dest_pool"]) for r in rows], dtype=np.int64)
        vols = np.array([float(r["volume_ul"]) for r in rows])
        clones = [layout.clone_at(p, w) for p, w in zip(plates, wells)]
        n = n if n is not None else (max(clones) + 1 if clones else 0)
        v = v if v is not None else (int(pools.max()) + 1 if len(pools) else 0)
        return cls(plates, wells, pools, vols, layout, n, v)

    def clone_ids(self) -> np.ndarray:
        return np.array([self.layout.clone_at(int(p), w)
                         for p, w in zip(self.source_plate, self.source_well)], dtype=np.int64)

    def to_design(self) -> PoolingDesign:
        """Rebuild the incidence the transfers implement."""
        clones = self.clone_ids()
        sets: List[List[int]] = [[] for _ in range(self.n)]
        for i, q in zip(clones, self.dest_pool):
            sets[int(i)].append(int(q))
        return PoolingDesign.from_sets(sets, self.v)


def emit_schedule(design: PoolingDesign, layout: PlateLayout | None = None,
                  volume_ul: float = DEFAULT_VOLUME_UL) -> TransferList:
    """One transfer per clone-pool incidence, clone-major with pools ascending."""
    layout = layout or PlateLayout()
    if volume_ul <= 0:
        raise ValueError("transfer volume must be positive")
    if design.n > layout.capacity:
        raise ValueError(f"layout holds {layout.capacity} clones, design has {design.n}")
    clones = np.repeat(np.arange(design.n), design.sizes)
    pools = np.concatenate([np.sort(design.pools_of(i)) for i in range(design.n)]) \
        if design.n else np.zeros(0, dtype=np.int64)
    plate, well = np.divmod(clones, layout.wells)
    names = [layout.well_name(int(w)) for w in well]
    return TransferList(plate + 1, names, pools.astype(np.int64),
                        np.full(len(pools), float(volume_ul)), layout, design.n, design.v)


@dataclass(frozen=True)
class ScheduleSummary:
    pool_volume_ul: np.ndarray
    pool_transfers: np.ndarray
    plate_volume_ul: Dict[int, float]
    plate_transfers: Dict[int, int]

    @property
    def total_volume_ul(self) -> float:
        return float(self.pool_volume_ul.sum())


def schedule_summary(transfers: TransferList) -> ScheduleSummary:
    v = max(transfers.v, int(transfers.dest_pool.max()) + 1 if len(transfers) else 0)
    pool_volume = np.bincount(transfers.dest_pool, weights=transfers.volume_ul, minlength=v)
    pool_count = np.bincount(transfers.dest_pool, minlength=v)
    plate_volume: Dict[int, float] = {}
    plate_count: Dict[int, int] = {}
    for plate, _, _, vol in transfers.records():
        plate_volume[plate] = plate_volume.get(plate, 0.0) + vol
        plate_count[plate] = plate_count.get(plate, 0) + 1
    return ScheduleSummary(pool_volume, pool_count, plate_volume, plate_count)
