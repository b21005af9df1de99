"""Travel-time predictors.

Methods: a linear-regression baseline on the endpoint L1 distance, the plain
neighbor average, temporally scaled variants (each neighbor's duration is
multiplied by the speed-reference ratio V(s_i) / V(s_q) before averaging),
the region-refined variants that draw the ratio from per-region-pair
references, and an optional soft weighting by grid distance.

The batch path answers each query independently, so results are bit
identical for any worker count; parallelism splits the query list across
processes that share the immutable index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Query,
    QueryTable,
    TripTable,
    cells_from_xy,
    endpoint_l1_miles,
    l1_miles_between,
    project_arrays,
)
from .errors import DegenerateDesignError, NoNeighborsError, NoReferenceAvailableError
from .index import GridIndex, NeighborSet, as_trip_table, neighbors
from .regions import RegionPairReference
from .speedref import SpeedReference

METHODS = ("lr", "avg", "temp_rel", "temp_abs", "temp_rel_r", "temp_abs_r")

DEFAULT_CLAMP = (0.2, 5.0)

# Floor on any emitted estimate; keeps relative errors defined even for a
# degenerate LR extrapolation near zero distance.
MIN_ESTIMATE_SECONDS = 1.0

STATUS_OK = 0
STATUS_FALLBACK_LR = 1
STATUS_NO_COVERAGE = 2
STATUS_OUT_OF_BOUNDS = 3
STATUS_NAMES = ("ok", "fallback_lr", "no_coverage", "out_of_bounds")


@dataclass
class Estimate:
    value: float                 # seconds
    neighbor_count: int
    method: str
    mean_scaling_factor: float | None = None
    query_reference: float | None = None
    fallback: bool = False


@dataclass
class LrModel:
    """duration ~ beta0 + beta1 * endpoint L1 miles, by least squares."""

    beta0: float
    beta1: float

    def predict(self, l1_miles):
        return np.maximum(self.beta0 + self.beta1 * np.asarray(l1_miles, dtype=np.float64),
                          MIN_ESTIMATE_SECONDS)

    def predict_query(self, q: Query) -> float:
        d = l1_miles_between(np.array([q.origin.lat]), np.array([q.origin.lon]),
                             np.array([q.destination.lat]), np.array([q.destination.lon]))
        return float(self.predict(d)[0])


def fit_lr(trips) -> LrModel:
    table = as_trip_table(trips)
    if len(table) < 2:
        raise DegenerateDesignError("need at least two trips to fit the LR baseline")
    x = endpoint_l1_miles(table)
    y = table.duration
    xm = x.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 0:
        raise DegenerateDesignError("endpoint distances are all identical")
    beta1 = float(np.sum((x - xm) * (y - y.mean())) / sxx)
    beta0 = float(y.mean() - beta1 * xm)
    return LrModel(beta0=beta0, beta1=beta1)


def estimate_avg(ns: NeighborSet) -> Estimate:
    if len(ns) == 0:
        raise NoNeighborsError("query has no neighboring trips")
    return Estimate(value=float(ns.durations.mean()), neighbor_count=len(ns), method="avg")


def default_weights(ns: NeighborSet) -> np.ndarray:
    """Soft spatial weights: closer endpoint cells weigh more; the +1 keeps
    exact-cell matches finite."""
    return 1.0 / (ns.origin_cell_l1 + ns.dest_cell_l1 + 1.0)


def estimate_weighted(ns: NeighborSet, weights: np.ndarray | None = None) -> Estimate:
    if len(ns) == 0:
        raise NoNeighborsError("query has no neighboring trips")
    w = default_weights(ns) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != len(ns) or np.any(w <= 0):
        raise ValueError("weights must be positive and match the neighbor set")
    value = float(np.dot(w, ns.durations) / w.sum())
    return Estimate(value=value, neighbor_count=len(ns), method="wavg")


def scaling_factor(ref_value_i: float, ref_value_q: float,
                   clamp: tuple[float, float] = DEFAULT_CLAMP) -> float:
    """V(s_i) / V(s_q), clamped against sparse-slot pathologies."""
    if not (math.isfinite(ref_value_i) and ref_value_i > 0):
        raise NoReferenceAvailableError(f"invalid reference value {ref_value_i}")
    if not (math.isfinite(ref_value_q) and ref_value_q > 0):
        raise NoReferenceAvailableError(f"invalid reference value {ref_value_q}")
    return min(max(ref_value_i / ref_value_q, clamp[0]), clamp[1])


def _neighbor_reference_values(ns: NeighborSet, reference: SpeedReference | None,
                               regions: RegionPairReference | None) -> np.ndarray:
    if regions is not None:
        rows = ns.index.order[ns.positions]
        t = ns.index.table
        pids = regions.partition.pair_ids(t.olat[rows], t.olon[rows],
                                          t.dlat[rows], t.dlon[rows])
        return regions.values_at(pids, ns.start_times)
    return reference.values_at(ns.start_times)


def estimate_temp(ns: NeighborSet, reference: SpeedReference | None, q: Query,
                  regions: RegionPairReference | None = None,
                  clamp: tuple[float, float] = DEFAULT_CLAMP,
                  weighted: bool = False) -> Estimate:
    """Mean of neighbor durations rescaled by the temporal reference ratio."""
    if len(ns) == 0:
        raise NoNeighborsError("query has no neighboring trips")
    if regions is not None:
        den = regions.value_for(q.origin, q.destination, q.start_time)
        mode = regions.mode
    else:
        den = reference.value_at(q.start_time)
        mode = reference.mode
    if not (math.isfinite(den) and den > 0):
        raise NoReferenceAvailableError(f"no reference value at query time {q.start_time}")
    num = _neighbor_reference_values(ns, reference, regions)
    factors = np.clip(num / den, clamp[0], clamp[1])
    scaled = ns.durations * factors
    if weighted:
        w = default_weights(ns)
        value = float(np.dot(w, scaled) / w.sum())
    else:
        value = float(scaled.mean())
    method = "temp_rel" if mode == "relative" else "temp_abs"
    if regions is not None:
        method += "_r"
    return Estimate(value=value, neighbor_count=len(ns), method=method,
                    mean_scaling_factor=float(factors.mean()), query_reference=den)


@dataclass
class BatchEstimates:
    """Per-query results in input order."""

    method: str
    query_id: np.ndarray
    value: np.ndarray           # NaN where no estimate was produced
    neighbor_count: np.ndarray
    status: np.ndarray          # STATUS_* codes

    def __len__(self) -> int:
        return len(self.query_id)

    @property
    def evaluated(self) -> np.ndarray:
        return (self.status == STATUS_OK) | (self.status == STATUS_FALLBACK_LR)

    def status_names(self) -> list[str]:
        return [STATUS_NAMES[s] for s in self.status]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "method", "estimate_seconds",
                             "neighbor_count", "status"])
            for qid, v, k, s in zip(self.query_id, self.value,
                                    self.neighbor_count, self.status):
                writer.writerow([int(qid), self.method,
                                 "" if math.isnan(v) else repr(float(v)),
                                 int(k), STATUS_NAMES[s]])


def as_query_table(queries) -> QueryTable:
    if isinstance(queries, QueryTable):
        return queries
    if isinstance(queries, TripTable):
        return QueryTable.from_trip_table(queries)
    return QueryTable.from_queries(queries)


# Read-only state inherited by forked batch workers.
_WORKER_STATE: dict = {}


def _estimate_chunk(index: GridIndex, tau: int, rows: np.ndarray,
                    oc: np.ndarray, orr: np.ndarray, dc: np.ndarray, dr: np.ndarray,
                    valid: np.ndarray, den: np.ndarray, num_s: np.ndarray | None,
                    lr_values: np.ndarray | None, use_temp: bool, weighted: bool,
                    clamp: tuple[float, float], fallback_lr: bool):
    nq = len(rows)
    values = np.full(nq, np.nan)
    counts = np.zeros(nq, dtype=np.int64)
    status = np.full(nq, STATUS_NO_COVERAGE, dtype=np.int8)
    lo, hi = clamp
    for j in range(nq):
        i = rows[j]
        if not valid[i]:
            status[j] = STATUS_OUT_OF_BOUNDS
            continue
        pos = index.neighbor_positions(int(oc[i]), int(orr[i]), int(dc[i]), int(dr[i]), tau)
        k = len(pos)
        if k == 0:
            if fallback_lr:
                values[j] = lr_values[i]
                status[j] = STATUS_FALLBACK_LR
            continue
        dur = index.dur_s[pos]
        if use_temp:
            factors = np.clip(num_s[pos] / den[i], lo, hi)
            dur = dur * factors
        if weighted:
            ol1 = np.abs(index.ocol_s[pos] - oc[i]) + np.abs(index.orow_s[pos] - orr[i])
            dl1 = np.abs(index.dcol_s[pos] - dc[i]) + np.abs(index.drow_s[pos] - dr[i])
            w = 1.0 / (ol1 + dl1 + 1.0)
            values[j] = float(np.dot(w, dur) / w.sum())
        else:
            values[j] = float(dur.mean())
        counts[j] = k
        status[j] = STATUS_OK
    return values, counts, status


def estimate_batch(index: GridIndex, queries, method: str, tau: int = 3,
                   reference: SpeedReference | None = None,
                   regions: RegionPairReference | None = None,
                   lr_model: LrModel | None = None,
                   thread_count: int = 1, fallback: str = "none",
                   clamp: tuple[float, float] = DEFAULT_CLAMP,
                   weighted: bool = False) -> BatchEstimates:
    """Estimate every query with one method.

    ``fallback="lr"`` answers uncovered queries with the LR baseline, tagged
    as such. ``thread_count`` > 1 fans the per-query loop out over worker
    processes; outputs do not depend on the worker count.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if fallback not in ("none", "lr"):
        raise ValueError("fallback must be 'none' or 'lr'")
    qt = as_query_table(queries)
    nq = len(qt)
    use_temp = method.startswith("temp")
    use_regions = method.endswith("_r")
    want_mode = "relative" if "rel" in method else "absolute"

    if method == "lr" or fallback == "lr":
        if lr_model is None:
            raise ValueError("an LR model is required for method or fallback 'lr'")
        lr_values = lr_model.predict(l1_miles_between(qt.olat, qt.olon, qt.dlat, qt.dlon))
    else:
        lr_values = None

    if method == "lr":
        return BatchEstimates(method=method, query_id=qt.id.copy(), value=lr_values,
                              neighbor_count=np.zeros(nq, dtype=np.int64),
                              status=np.full(nq, STATUS_OK, dtype=np.int8))

    bbox = index.bbox
    valid = (bbox.contains_arrays(qt.olat, qt.olon)
             & bbox.contains_arrays(qt.dlat, qt.dlon))
    ox, oy = project_arrays(qt.olat, qt.olon, bbox)
    dx, dy = project_arrays(qt.dlat, qt.dlon, bbox)
    oc, orr = cells_from_xy(np.where(valid, ox, 0.0), np.where(valid, oy, 0.0), index.cell_size)
    dc, dr = cells_from_xy(np.where(valid, dx, 0.0), np.where(valid, dy, 0.0), index.cell_size)

    num_s = None
    den = np.ones(nq)
    if use_temp:
        if use_regions:
            if regions is None or regions.mode != want_mode:
                raise ValueError(f"method {method} needs region references in {want_mode} mode")
            pair_s = regions.trip_pair_ids(index.table)[index.order]
            num_s = regions.values_at(pair_s, index.start_s)
            qpids = regions.partition.pair_ids(qt.olat, qt.olon, qt.dlat, qt.dlon)
            den = regions.values_at(qpids, qt.start)
        else:
            if reference is None or reference.mode != want_mode:
                raise ValueError(f"method {method} needs a speed reference in {want_mode} mode")
            num_s = reference.values_at(index.start_s)
            den = reference.values_at(qt.start)

    rows = np.arange(nq, dtype=np.int64)
    state = dict(index=index, tau=tau, oc=oc, orr=orr, dc=dc, dr=dr, valid=valid,
                 den=den, num_s=num_s, lr_values=lr_values, use_temp=use_temp,
                 weighted=weighted, clamp=clamp, fallback_lr=fallback == "lr")
    if thread_count <= 1 or nq < 2 * thread_count or not _fork_available():
        values, counts, status = _run_chunk_from_state(state, rows)
    else:
        import multiprocessing as mp
        # Workers inherit the immutable index and per-query arrays through
        # fork (copy-on-write): nothing large is pickled per task.
        _WORKER_STATE["batch"] = state
        try:
            ctx = mp.get_context("fork")
            chunks = [c for c in np.array_split(rows, thread_count * 4) if len(c)]
            with ctx.Pool(processes=thread_count) as pool:
                parts = pool.map(_run_worker_chunk, chunks)
        finally:
            _WORKER_STATE.pop("batch", None)
        values = np.concatenate([p[0] for p in parts])
        counts = np.concatenate([p[1] for p in parts])
        status = np.concatenate([p[2] for p in parts])
    return BatchEstimates(method=method, query_id=qt.id.copy(), value=values,
                          neighbor_count=counts, status=status)


def _fork_available() -> bool:
    import multiprocessing as mp
    return "fork" in mp.get_all_start_methods()


def _run_chunk_from_state(state: dict, rows: np.ndarray):
    return _estimate_chunk(
        state["index"], state["tau"], rows, state["oc"], state["orr"], state["dc"],
        state["dr"], state["valid"], state["den"], state["num_s"], state["lr_values"],
        state["use_temp"], state["weighted"], state["clamp"], state["fallback_lr"])


def _run_worker_chunk(rows: np.ndarray):
    return _run_chunk_from_state(_WORKER_STATE["batch"], rows)


def estimate_single(index: GridIndex, q: Query, method: str, tau: int = 3,
                    reference: SpeedReference | None = None,
                    regions: RegionPairReference | None = None,
                    lr_model: LrModel | None = None,
                    clamp: tuple[float, float] = DEFAULT_CLAMP,
                    weighted: bool = False,
                    fallback: str = "none") -> Estimate:
    """One query through the scalar operations; mirrors the batch semantics."""
    if method == "lr":
        if lr_model is None:
            raise ValueError("an LR model is required for method 'lr'")
        return Estimate(value=lr_model.predict_query(q), neighbor_count=0, method="lr")
    ns = neighbors(index, q, tau)
    if len(ns) == 0 and fallback == "lr" and lr_model is not None:
        return Estimate(value=lr_model.predict_query(q), neighbor_count=0,
                        method=method, fallback=True)
    if method == "avg":
        return estimate_weighted(ns) if weighted else estimate_avg(ns)
    return estimate_temp(ns, reference, q,
                         regions=regions if method.endswith("_r") else None,
                         clamp=clamp, weighted=weighted)
