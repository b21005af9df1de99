"""Train/test splitting, accuracy metrics, coverage and feature breakdowns,
and the scaling-assumption diagnostic report.

Metric conventions: MAE = sum|y - yhat| / n, MRE = sum|y - yhat| / sum(y),
MedAE = median|y - yhat|, MedRE = median(|y - yhat| / y); the median of an
even-length vector is the midpoint of the two central order statistics.
Sums use exactly-rounded accumulation so results do not depend on
vectorization details.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GeoBoundingBox,
    Query,
    QueryTable,
    TimeSlotConfig,
    TripTable,
    bbox_from_table,
)
from .errors import EmptyInputError, InsufficientPairsError, LengthMismatchError
from .estimator import (
    BatchEstimates,
    LrModel,
    estimate_batch,
    fit_lr,
)
from .index import GridIndex, as_trip_table, build_index, neighbors
from .outliers import FeaturePair, filter_pipeline
from .regions import RegionPairReference, RegionPartition, build_region_references
from .speedref import SpeedReference, fit_reference


@dataclass
class MetricReport:
    mae: float
    mre: float
    medae: float
    medre: float
    n_evaluated: int
    n_nocoverage: int

    def to_dict(self) -> dict:
        return {"mae": self.mae, "mre": self.mre, "medae": self.medae,
                "medre": self.medre, "n_evaluated": self.n_evaluated,
                "n_nocoverage": self.n_nocoverage}


def compute_metrics(truth, estimates, n_nocoverage: int = 0) -> MetricReport:
    y = np.asarray(truth, dtype=np.float64)
    e = np.asarray(estimates, dtype=np.float64)
    if len(y) != len(e):
        raise LengthMismatchError(f"{len(y)} truths vs {len(e)} estimates")
    if len(y) == 0:
        raise EmptyInputError("cannot compute metrics on empty vectors")
    if np.any(y <= 0):
        raise ValueError("ground-truth durations must be positive")
    abs_err = np.abs(y - e)
    n = len(y)
    sum_err = math.fsum(abs_err)
    return MetricReport(
        mae=sum_err / n,
        mre=sum_err / math.fsum(y),
        medae=float(np.median(abs_err)),
        medre=float(np.median(abs_err / y)),
        n_evaluated=n,
        n_nocoverage=n_nocoverage,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/test time intervals, train first; optional seeded
    subsampling of the test queries."""

    train_start: float
    train_end: float
    test_start: float
    test_end: float
    subsample: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.train_start < self.train_end <= self.test_start < self.test_end):
            raise ValueError("intervals must be disjoint with train before test")


@dataclass
class ExperimentSettings:
    cell_size: float = 50.0
    tau: int = 3
    slot_config: TimeSlotConfig = field(default_factory=TimeSlotConfig)
    arima_order: tuple[int, int, int] = (2, 1, 0)
    region_shape: tuple[int, int] = (8, 8)
    min_support: int = 10
    clamp: tuple[float, float] = (0.2, 5.0)
    weighted: bool = False
    fallback: str = "none"
    thread_count: int = 1
    bbox: GeoBoundingBox | None = None
    filter_pairs: list[FeaturePair] | None = None
    seed: int = 0


@dataclass
class ExperimentResult:
    methods: list[str]
    reports: dict[str, MetricReport]
    batches: dict[str, BatchEstimates]
    truth: np.ndarray
    test_table: TripTable
    train_count: int
    index: GridIndex
    references: dict[str, object]
    lr_model: LrModel

    def to_json(self) -> str:
        return json.dumps({m: self.reports[m].to_dict() for m in self.methods}, indent=2)

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "mae", "mre", "medae", "medre",
                             "n_evaluated", "n_nocoverage"])
            for m in self.methods:
                r = self.reports[m]
                writer.writerow([m, r.mae, r.mre, r.medae, r.medre,
                                 r.n_evaluated, r.n_nocoverage])


def split_tables(table: TripTable, split: SplitSpec) -> tuple[TripTable, TripTable]:
    train = table.select((table.start >= split.train_start) & (table.start < split.train_end))
    test = table.select((table.start >= split.test_start) & (table.start < split.test_end))
    if split.subsample is not None and split.subsample < len(test):
        rng = np.random.default_rng(split.seed)
        rows = np.sort(rng.choice(len(test), size=split.subsample, replace=False))
        test = test.select(rows)
    return train, test


def fit_references_for(methods, train: TripTable, settings: ExperimentSettings,
                       bbox: GeoBoundingBox) -> dict[str, object]:
    """Fit exactly the references the requested methods need."""
    refs: dict[str, object] = {}
    cfg = settings.slot_config
    if any(m in ("temp_rel", "temp_rel_r") for m in methods):
        refs["relative"] = fit_reference(train, cfg, "relative")
    if any(m in ("temp_abs", "temp_abs_r") for m in methods):
        refs["absolute"] = fit_reference(train, cfg, "absolute",
                                         arima_order=settings.arima_order)
    partition = RegionPartition(bbox=bbox, cols=settings.region_shape[0],
                                rows=settings.region_shape[1])
    if "temp_rel_r" in methods:
        refs["regions_relative"] = build_region_references(
            train, partition, cfg, "relative", min_support=settings.min_support,
            arima_order=settings.arima_order)
    if "temp_abs_r" in methods:
        refs["regions_absolute"] = build_region_references(
            train, partition, cfg, "absolute", min_support=settings.min_support,
            arima_order=settings.arima_order)
    return refs


def _reference_args(method: str, refs: dict[str, object]):
    reference: SpeedReference | None = None
    regions: RegionPairReference | None = None
    if method == "temp_rel":
        reference = refs["relative"]
    elif method == "temp_abs":
        reference = refs["absolute"]
    elif method == "temp_rel_r":
        regions = refs["regions_relative"]
    elif method == "temp_abs_r":
        regions = refs["regions_absolute"]
    return reference, regions


def run_experiment(trips, split: SplitSpec, methods,
                   settings: ExperimentSettings | None = None) -> ExperimentResult:
    """Full pipeline: (optional) outlier filter, index build on train,
    reference fits on train, batch estimation on test, metrics per method.

    All randomness (subsampling) flows from the split's seed, so a repeat
    run is bit-identical.
    """
    settings = settings or ExperimentSettings()
    table = as_trip_table(trips)
    if settings.filter_pairs:
        table, _ = filter_pipeline(table, settings.filter_pairs)
    train, test = split_tables(table, split)
    bbox = settings.bbox or bbox_from_table(table)
    index = build_index(train, settings.cell_size, bbox)
    lr_model = fit_lr(index.table)
    refs = fit_references_for(methods, index.table, settings, bbox)
    for ref in refs.values():
        if isinstance(ref, SpeedReference) and ref.mode == "absolute":
            ref.ensure_forecast_through(ref.horizon_slot)

    queries = QueryTable.from_trip_table(test)
    truth_all = test.duration
    reports: dict[str, MetricReport] = {}
    batches: dict[str, BatchEstimates] = {}
    for method in methods:
        reference, regions = _reference_args(method, refs)
        batch = estimate_batch(
            index, queries, method, tau=settings.tau, reference=reference,
            regions=regions, lr_model=lr_model, thread_count=settings.thread_count,
            fallback=settings.fallback, clamp=settings.clamp, weighted=settings.weighted)
        mask = batch.evaluated
        reports[method] = compute_metrics(truth_all[mask], batch.value[mask],
                                          n_nocoverage=int((~mask).sum()))
        batches[method] = batch
    return ExperimentResult(methods=list(methods), reports=reports, batches=batches,
                            truth=truth_all, test_table=test, train_count=len(train),
                            index=index, references=refs, lr_model=lr_model)


@dataclass
class BinReport:
    lo: float
    hi: float
    population: int
    report: MetricReport | None   # None marks an empty bin


def breakdown(truth: np.ndarray, batch: BatchEstimates, feature: np.ndarray,
              bins) -> list[BinReport]:
    """Metrics per feature bin; empty bins are marked, never NaN-propagated."""
    edges = np.asarray(bins, dtype=np.float64)
    if len(edges) < 2:
        raise ValueError("need at least two bin edges")
    feature = np.asarray(feature, dtype=np.float64)
    mask = batch.evaluated
    if mask.any():
        observed = feature[mask]
        if observed.min() < edges[0] or observed.max() > edges[-1]:
            raise ValueError("bins do not cover the observed feature range")
    out: list[BinReport] = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        inbin = mask & (feature >= lo) & (feature < hi)
        if hi == edges[-1]:
            inbin = mask & (feature >= lo) & (feature <= hi)
        pop = int(inbin.sum())
        if pop == 0:
            out.append(BinReport(lo=float(lo), hi=float(hi), population=0, report=None))
            continue
        rep = compute_metrics(truth[inbin], batch.value[inbin])
        out.append(BinReport(lo=float(lo), hi=float(hi), population=pop, report=rep))
    return out


def breakdown_feature(result: ExperimentResult, method: str, by: str) -> np.ndarray:
    if by == "trip_time":
        return result.truth
    if by == "trip_distance":
        return result.test_table.distance
    if by == "neighbor_count":
        return result.batches[method].neighbor_count.astype(np.float64)
    raise ValueError(f"unknown breakdown feature {by!r}")


def breakdown_to_csv(rows: list[BinReport], path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "population", "mae", "mre", "medae", "medre"])
        for r in rows:
            if r.report is None:
                writer.writerow([r.lo, r.hi, 0, "", "", "", ""])
            else:
                writer.writerow([r.lo, r.hi, r.population, r.report.mae, r.report.mre,
                                 r.report.medae, r.report.medre])


def ols_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2 of y on x."""
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 0:
        slope, intercept = 0.0, float(ym)
    else:
        slope = float(np.sum((x - xm) * (y - ym)) / sxx)
        intercept = float(ym - slope * xm)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


@dataclass
class AssumptionReport:
    """Reference ratio regressed on the actual speed ratio over sampled
    neighbor pairs; a slope near 1 with high R^2 means the per-slot average
    speeds are a usable stand-in for actual regime speeds."""

    slope: float
    intercept: float
    r2: float
    n_pairs: int
    scatter: np.ndarray   # columns: actual v_i/v_q, reference V(s_i)/V(s_q), t_q/t_i

    @property
    def speed_ratio(self) -> np.ndarray:
        return self.scatter[:, 0]

    @property
    def reference_ratio(self) -> np.ndarray:
        return self.scatter[:, 1]

    @property
    def duration_ratio(self) -> np.ndarray:
        return self.scatter[:, 2]

    def write_csv(self, path) -> None:
        np.savetxt(path, self.scatter, delimiter=",",
                   header="speed_ratio,reference_ratio,duration_ratio", comments="")


def assumption_report(trips, reference: SpeedReference | None, sample_pairs: int,
                      seed: int = 0, *, tau: int = 3, cell_size: float = 50.0,
                      bbox: GeoBoundingBox | None = None,
                      regions: RegionPairReference | None = None) -> AssumptionReport:
    """Sample neighbor pairs (q, i) and fit an OLS line of the reference
    ratio V(s_i) / V(s_q) against the actual speed ratio v_i / v_q."""
    table = as_trip_table(trips)
    bbox = bbox or bbox_from_table(table)
    index = build_index(table, cell_size, bbox)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(table))
    speeds = table.speed_mph

    if regions is not None:
        pair_of_trip = regions.trip_pair_ids(table)

    rows_out: list[tuple[float, float, float]] = []
    for row in order:
        if len(rows_out) >= sample_pairs:
            break
        q_trip = table[int(row)]
        q = Query(origin=q_trip.origin, destination=q_trip.destination,
                  start_time=q_trip.start_time, id=q_trip.id)
        ns = neighbors(index, q, tau)
        if len(ns) == 0:
            continue
        candidates = ns.positions[index.ids_s[ns.positions] != q_trip.id]
        if len(candidates) == 0:
            continue
        pick = int(candidates[rng.integers(len(candidates))])
        i_row = int(index.order[pick])
        s_i = float(table.start[i_row])
        if regions is not None:
            v_ref_i = regions.values_at(pair_of_trip[[i_row]], np.array([s_i]))[0]
            v_ref_q = regions.values_at(pair_of_trip[[int(row)]], np.array([q.start_time]))[0]
        else:
            v_ref_i = float(reference.values_at(np.array([s_i]))[0])
            v_ref_q = float(reference.values_at(np.array([q.start_time]))[0])
        rows_out.append((
            float(speeds[i_row]) / q_trip.speed_mph,
            v_ref_i / v_ref_q,
            q_trip.duration / float(table.duration[i_row]),
        ))

    if len(rows_out) < 2:
        raise InsufficientPairsError(f"only {len(rows_out)} neighbor pairs could be sampled")
    scatter = np.array(rows_out)
    slope, intercept, r2 = ols_line(scatter[:, 0], scatter[:, 1])
    return AssumptionReport(slope=slope, intercept=intercept, r2=r2,
                            n_pairs=len(scatter), scatter=scatter)
