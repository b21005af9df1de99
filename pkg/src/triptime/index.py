"""Raster grid index over trip endpoints with L1 neighborhood retrieval.

Each trip is bucketed by its (origin cell, destination cell) pair. Buckets
are materialized as one array of composite int64 keys sorted by (key, trip
id); a bucket is then a contiguous range found by binary search, which keeps
the index compact, immutable and cheap to share across worker processes.

Retrieval of the trips whose origin cell is within L1 distance tau of the
query's origin cell AND destination cell within tau of the query's
destination cell enumerates the (2*tau^2 + 2*tau + 1)^2 candidate cell-pair
keys directly while tau is small; for larger tau it walks the origin-cell
ranges and post-filters destinations, which bounds the work by the densest
origin cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    GeoBoundingBox,
    GridCell,
    Query,
    Trip,
    TripTable,
    cells_from_xy,
    project,
    project_arrays,
    to_cell,
)
from .errors import OutOfBoundsError

# Bit layout of composite keys: 15 bits per coordinate.
_COORD_BITS = 15
_MAX_CELLS = 1 << _COORD_BITS
_OKEY_SHIFT = 2 * _COORD_BITS

# Above this tau the candidate-key enumeration loses to scanning origin
# buckets with a destination post-filter.
_COMPOSITE_TAU_MAX = 3

_SNAPSHOT_VERSION = 1

_ball_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _l1_ball(tau: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (dx, dy) with |dx| + |dy| <= tau."""
    if tau not in _ball_cache:
        r = np.arange(-tau, tau + 1)
        dx, dy = np.meshgrid(r, r, indexing="ij")
        keep = np.abs(dx) + np.abs(dy) <= tau
        _ball_cache[tau] = (dx[keep].astype(np.int64), dy[keep].astype(np.int64))
    return _ball_cache[tau]


@dataclass
class GridIndex:
    """Immutable index over a :class:`TripTable`; build with :func:`build_index`."""

    cell_size: float
    bbox: GeoBoundingBox
    n_cols: int
    n_rows: int
    table: TripTable          # indexed trips only, original row order
    keys: np.ndarray          # int64 composite keys, ascending
    order: np.ndarray         # position into `table` for each sorted slot
    ocol_s: np.ndarray        # cells, aligned with `keys`
    orow_s: np.ndarray
    dcol_s: np.ndarray
    drow_s: np.ndarray
    ids_s: np.ndarray
    dur_s: np.ndarray
    start_s: np.ndarray
    dist_s: np.ndarray
    rejected_ids: np.ndarray  # trips dropped because an endpoint left the bbox

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def cell_count(self) -> int:
        """h: total number of grid cells in the raster partition."""
        return self.n_cols * self.n_rows

    @property
    def max_bucket_fraction(self) -> float:
        """alpha: share of trips in the densest origin cell."""
        if len(self.keys) == 0:
            return 0.0
        okeys = self.keys >> _OKEY_SHIFT
        _, counts = np.unique(okeys, return_counts=True)
        return float(counts.max()) / len(self.keys)

    def sorted_view(self, per_trip: np.ndarray) -> np.ndarray:
        """Reorder a table-aligned array to the index's sorted order."""
        return per_trip[self.order]

    def query_cells(self, q: Query) -> tuple[int, int, int, int]:
        oc = to_cell(project(q.origin, self.bbox), self.cell_size)
        dc = to_cell(project(q.destination, self.bbox), self.cell_size)
        return oc.col, oc.row, dc.col, dc.row

    def bucket(self, origin_cell: GridCell, dest_cell: GridCell) -> np.ndarray:
        """Trip ids sharing the exact (origin cell, destination cell) pair."""
        key = _pack_keys(
            np.array([origin_cell.col]), np.array([origin_cell.row]),
            np.array([dest_cell.col]), np.array([dest_cell.row]))[0]
        lo = np.searchsorted(self.keys, key, side="left")
        hi = np.searchsorted(self.keys, key, side="right")
        return self.ids_s[lo:hi]

    def neighbor_positions(self, oc: int, orr: int, dc: int, dr: int, tau: int) -> np.ndarray:
        """Sorted-slot positions of all neighbors at radius ``tau``."""
        if tau <= _COMPOSITE_TAU_MAX:
            okeys = self._valid_part_keys(oc, orr, tau)
            dkeys = self._valid_part_keys(dc, dr, tau)
            if len(okeys) == 0 or len(dkeys) == 0:
                return np.empty(0, dtype=np.int64)
            cand = ((okeys[:, None] << _OKEY_SHIFT) | dkeys[None, :]).ravel()
            lo = np.searchsorted(self.keys, cand, side="left")
            hi = np.searchsorted(self.keys, cand, side="right")
            pos = _gather_ranges(lo, hi)
        else:
            okeys = self._valid_part_keys(oc, orr, tau)
            if len(okeys) == 0:
                return np.empty(0, dtype=np.int64)
            lo = np.searchsorted(self.keys, okeys << _OKEY_SHIFT, side="left")
            hi = np.searchsorted(self.keys, (okeys + 1) << _OKEY_SHIFT, side="left")
            pos = _gather_ranges(lo, hi)
            if len(pos):
                dl1 = np.abs(self.dcol_s[pos] - dc) + np.abs(self.drow_s[pos] - dr)
                pos = pos[dl1 <= tau]
        pos.sort()
        return pos

    def _valid_part_keys(self, col: int, row: int, tau: int) -> np.ndarray:
        dx, dy = _l1_ball(tau)
        cols = col + dx
        rows = row + dy
        ok = (cols >= 0) & (cols < self.n_cols) & (rows >= 0) & (rows < self.n_rows)
        return (cols[ok] << _COORD_BITS) | rows[ok]


@dataclass
class NeighborSet:
    """Trips within L1 grid distance tau of a query, on both endpoints."""

    index: GridIndex
    positions: np.ndarray
    origin_cell_l1: np.ndarray
    dest_cell_l1: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def trip_ids(self) -> np.ndarray:
        return self.index.ids_s[self.positions]

    @property
    def durations(self) -> np.ndarray:
        return self.index.dur_s[self.positions]

    @property
    def start_times(self) -> np.ndarray:
        return self.index.start_s[self.positions]

    @property
    def distances(self) -> np.ndarray:
        return self.index.dist_s[self.positions]

    @property
    def entries(self) -> list[tuple[Trip, int, int]]:
        rows = self.index.order[self.positions]
        return [
            (self.index.table[int(r)], int(o), int(d))
            for r, o, d in zip(rows, self.origin_cell_l1, self.dest_cell_l1)
        ]


def _pack_keys(ocol: np.ndarray, orow: np.ndarray,
               dcol: np.ndarray, drow: np.ndarray) -> np.ndarray:
    okey = (ocol.astype(np.int64) << _COORD_BITS) | orow.astype(np.int64)
    dkey = (dcol.astype(np.int64) << _COORD_BITS) | drow.astype(np.int64)
    return (okey << _OKEY_SHIFT) | dkey


def _gather_ranges(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Concatenate [lo_i, hi_i) ranges into one index array."""
    lens = hi - lo
    nz = lens > 0
    if not nz.any():
        return np.empty(0, dtype=np.int64)
    starts = lo[nz]
    lens = lens[nz]
    total = int(lens.sum())
    ends = np.cumsum(lens)
    out = np.repeat(starts - np.concatenate(([0], ends[:-1])), lens)
    return out + np.arange(total, dtype=np.int64)


def build_index(trips, cell_size: float, bbox: GeoBoundingBox) -> GridIndex:
    """Single-pass O(N) build; bucket contents are sorted by trip id so the
    result is independent of the input ordering. Trips with an endpoint
    outside ``bbox`` are collected in ``rejected_ids`` rather than failing
    the build.
    """
    table = as_trip_table(trips)
    inside = (bbox.contains_arrays(table.olat, table.olon)
              & bbox.contains_arrays(table.dlat, table.dlon))
    rejected_ids = table.id[~inside]
    kept = table.select(inside) if not inside.all() else table

    ox, oy = project_arrays(kept.olat, kept.olon, bbox)
    dx, dy = project_arrays(kept.dlat, kept.dlon, bbox)
    ocol, orow = cells_from_xy(ox, oy, cell_size)
    dcol, drow = cells_from_xy(dx, dy, cell_size)

    n_cols = int(np.floor(bbox.width_m() / cell_size)) + 1
    n_rows = int(np.floor(bbox.height_m() / cell_size)) + 1
    if n_cols >= _MAX_CELLS or n_rows >= _MAX_CELLS:
        raise ValueError(
            f"grid of {n_cols}x{n_rows} cells exceeds the {_MAX_CELLS - 1} per-side limit; "
            "increase cell_size or shrink the bounding box")

    keys = _pack_keys(ocol, orow, dcol, drow)
    order = np.lexsort((kept.id, keys)).astype(np.int64)
    return GridIndex(
        cell_size=cell_size,
        bbox=bbox,
        n_cols=n_cols,
        n_rows=n_rows,
        table=kept,
        keys=keys[order],
        order=order,
        ocol_s=ocol[order],
        orow_s=orow[order],
        dcol_s=dcol[order],
        drow_s=drow[order],
        ids_s=kept.id[order],
        dur_s=kept.duration[order],
        start_s=kept.start[order],
        dist_s=kept.distance[order],
        rejected_ids=rejected_ids,
    )


def as_trip_table(trips) -> TripTable:
    if isinstance(trips, TripTable):
        return trips
    return TripTable.from_trips(trips)


def neighbors(index: GridIndex, q: Query, tau: int) -> NeighborSet:
    """All indexed trips with origin cell within L1 ``tau`` of the query's
    origin cell and destination cell within ``tau`` of its destination cell.

    Equals a brute-force scan with the same predicate; raises
    :class:`OutOfBoundsError` when a query endpoint leaves the bbox.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    oc, orr, dc, dr = index.query_cells(q)
    pos = index.neighbor_positions(oc, orr, dc, dr, tau)
    return NeighborSet(
        index=index,
        positions=pos,
        origin_cell_l1=np.abs(index.ocol_s[pos] - oc) + np.abs(index.orow_s[pos] - orr),
        dest_cell_l1=np.abs(index.dcol_s[pos] - dc) + np.abs(index.drow_s[pos] - dr),
    )


def brute_force_neighbors(trips, cell_size: float, bbox: GeoBoundingBox,
                          q: Query, tau: int) -> np.ndarray:
    """Linear-scan oracle: trip ids satisfying the neighbor predicate."""
    table = as_trip_table(trips)
    inside = (bbox.contains_arrays(table.olat, table.olon)
              & bbox.contains_arrays(table.dlat, table.dlon))
    ox, oy = project_arrays(table.olat, table.olon, bbox)
    dx, dy = project_arrays(table.dlat, table.dlon, bbox)
    ocol, orow = cells_from_xy(ox, oy, cell_size)
    dcol, drow = cells_from_xy(dx, dy, cell_size)
    qo = to_cell(project(q.origin, bbox), cell_size)
    qd = to_cell(project(q.destination, bbox), cell_size)
    hit = (inside
           & (np.abs(ocol - qo.col) + np.abs(orow - qo.row) <= tau)
           & (np.abs(dcol - qd.col) + np.abs(drow - qd.row) <= tau))
    return np.sort(table.id[hit])


def coverage(index: GridIndex, queries, tau: int) -> float:
    """Fraction of queries with at least one neighbor at radius ``tau``."""
    n = len(queries)
    if n == 0:
        raise ValueError("queries must be nonempty")
    covered = 0
    for i in range(n):
        q = queries[i]
        try:
            oc, orr, dc, dr = index.query_cells(q)
        except OutOfBoundsError:
            continue
        if len(index.neighbor_positions(oc, orr, dc, dr, tau)) > 0:
            covered += 1
    return covered / n


def save_index(index: GridIndex, path) -> None:
    """Persist the index as a versioned binary snapshot (.npz)."""
    t = index.table
    np.savez_compressed(
        path,
        version=np.array([_SNAPSHOT_VERSION], dtype=np.int64),
        cell_size=np.array([index.cell_size]),
        bbox=np.array(index.bbox.as_tuple()),
        grid_shape=np.array([index.n_cols, index.n_rows], dtype=np.int64),
        keys=index.keys, order=index.order,
        ocol_s=index.ocol_s, orow_s=index.orow_s,
        dcol_s=index.dcol_s, drow_s=index.drow_s,
        rejected_ids=index.rejected_ids,
        trip_id=t.id, trip_olat=t.olat, trip_olon=t.olon,
        trip_dlat=t.dlat, trip_dlon=t.dlon, trip_start=t.start,
        trip_distance=t.distance, trip_duration=t.duration, trip_fare=t.fare,
    )


def load_index(path) -> GridIndex:
    with np.load(path) as z:
        version = int(z["version"][0])
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"unsupported index snapshot version {version}")
        table = TripTable(
            id=z["trip_id"], olat=z["trip_olat"], olon=z["trip_olon"],
            dlat=z["trip_dlat"], dlon=z["trip_dlon"], start=z["trip_start"],
            distance=z["trip_distance"], duration=z["trip_duration"], fare=z["trip_fare"])
        bb = z["bbox"]
        order = z["order"]
        return GridIndex(
            cell_size=float(z["cell_size"][0]),
            bbox=GeoBoundingBox(*[float(v) for v in bb]),
            n_cols=int(z["grid_shape"][0]),
            n_rows=int(z["grid_shape"][1]),
            table=table,
            keys=z["keys"], order=order,
            ocol_s=z["ocol_s"], orow_s=z["orow_s"],
            dcol_s=z["dcol_s"], drow_s=z["drow_s"],
            ids_s=table.id[order], dur_s=table.duration[order],
            start_s=table.start[order], dist_s=table.distance[order],
            rejected_ids=z["rejected_ids"],
        )
