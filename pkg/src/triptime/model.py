"""Scikit-learn style front door.

``TravelTimeEstimator`` wraps the whole pipeline behind fit/predict so it
composes with the wider ecosystem (get_params/set_params/clone work as
usual); ``OutlierTripFilter`` wraps the mixture-model filter behind
fit/transform. Both accept TripTables, lists of Trip, or DataFrames with
the canonical columns.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .core import GeoBoundingBox, TimeSlotConfig, bbox_from_table
from .errors import TripTimeError
from .estimator import (
    METHODS,
    BatchEstimates,
    estimate_batch,
    fit_lr,
)
from .evaluation import compute_metrics
from .index import build_index, coverage
from .outliers import FeaturePair, default_feature_pairs, filter_pipeline
from .regions import RegionPartition, build_region_references
from .speedref import fit_reference
from .validation import check_queries, check_trips


class TravelTimeEstimator(BaseEstimator):
    """Origin-destination travel time estimator.

    fit() indexes the training trips on a raster grid and learns the
    temporal speed references required by ``method``; predict() answers
    queries by averaging the durations of spatially neighboring trips,
    rescaled to the query's traffic regime.

    Parameters mirror the pipeline defaults: 50 m cells, neighborhood
    radius tau=3, hourly slots over a weekly window, AR order (2,1,0) on
    the seasonal difference, an 8x8 region grid with min_support 10.
    """

    def __init__(self, method: str = "temp_rel", tau: int = 3, cell_size: float = 50.0,
                 bbox: GeoBoundingBox | None = None, slot_seconds: int = 3600,
                 period_slots: int = 168, timezone_offset: int = 0,
                 arima_order: tuple[int, int, int] = (2, 1, 0),
                 region_shape: tuple[int, int] = (8, 8), min_support: int = 10,
                 scale_clamp: tuple[float, float] = (0.2, 5.0), weighted: bool = False,
                 fallback: str = "none", thread_count: int = 1):
        self.method = method
        self.tau = tau
        self.cell_size = cell_size
        self.bbox = bbox
        self.slot_seconds = slot_seconds
        self.period_slots = period_slots
        self.timezone_offset = timezone_offset
        self.arima_order = arima_order
        self.region_shape = region_shape
        self.min_support = min_support
        self.scale_clamp = scale_clamp
        self.weighted = weighted
        self.fallback = fallback
        self.thread_count = thread_count

    def fit(self, X, y=None):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        table = check_trips(X)
        self.slot_config_ = TimeSlotConfig(slot_seconds=self.slot_seconds,
                                           period_slots=self.period_slots,
                                           timezone_offset=self.timezone_offset)
        self.bbox_ = self.bbox if self.bbox is not None else bbox_from_table(table)
        self.index_ = build_index(table, self.cell_size, self.bbox_)
        self.lr_ = fit_lr(self.index_.table)
        self.reference_ = None
        self.regions_ = None
        if self.method.startswith("temp"):
            mode = "relative" if "rel" in self.method else "absolute"
            if self.method.endswith("_r"):
                partition = RegionPartition(bbox=self.bbox_, cols=self.region_shape[0],
                                            rows=self.region_shape[1])
                self.regions_ = build_region_references(
                    self.index_.table, partition, self.slot_config_, mode,
                    min_support=self.min_support, arima_order=self.arima_order)
            else:
                self.reference_ = fit_reference(self.index_.table, self.slot_config_,
                                                mode, arima_order=self.arima_order)
                if mode == "absolute":
                    self.reference_.ensure_forecast_through(self.reference_.horizon_slot)
        self.n_indexed_ = len(self.index_)
        return self

    def predict_detailed(self, X) -> BatchEstimates:
        self._check_fitted()
        queries = check_queries(X)
        return estimate_batch(
            self.index_, queries, self.method, tau=self.tau,
            reference=self.reference_, regions=self.regions_, lr_model=self.lr_,
            thread_count=self.thread_count, fallback=self.fallback,
            clamp=self.scale_clamp, weighted=self.weighted)

    def predict(self, X) -> np.ndarray:
        """Estimated seconds per query; NaN where no neighbors exist and no
        fallback was requested."""
        return self.predict_detailed(X).value

    def score(self, X, y) -> float:
        """Negative MAE over the queries that received an estimate."""
        batch = self.predict_detailed(X)
        y = np.asarray(y, dtype=np.float64)
        mask = batch.evaluated
        if not mask.any():
            raise TripTimeError("no query could be evaluated")
        return -compute_metrics(y[mask], batch.value[mask]).mae

    def coverage(self, X) -> float:
        self._check_fitted()
        queries = check_queries(X)
        return coverage(self.index_, queries, self.tau)

    def _check_fitted(self) -> None:
        if not hasattr(self, "index_"):
            raise TripTimeError("estimator is not fitted; call fit() first")


class OutlierTripFilter(BaseEstimator):
    """Transductive outlier removal: fit() runs the feature-pair filter
    pipeline on the given trips and transform() drops the flagged ones.

    transform() only accepts the same trips the filter was fitted on; the
    mixture model scores one concrete dataset rather than generalizing.
    """

    def __init__(self, pairs: list[FeaturePair] | None = None, nu: float = 3.0,
                 t_scale: float = 10.0, p_init: float = 0.05,
                 p_bounds: tuple[float, float] = (0.001, 0.30),
                 tol: float = 1e-6, max_iter: int = 200):
        self.pairs = pairs
        self.nu = nu
        self.t_scale = t_scale
        self.p_init = p_init
        self.p_bounds = p_bounds
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        table = check_trips(X)
        pairs = self.pairs if self.pairs is not None else default_feature_pairs(table.has_fare())
        clean, stages = filter_pipeline(
            table, pairs, nu=self.nu, t_scale=self.t_scale, p_init=self.p_init,
            p_bounds=self.p_bounds, tol=self.tol, max_iter=self.max_iter)
        self.stages_ = stages
        self.input_ids_ = table.id.copy()
        flagged: set[int] = set()
        for st in stages:
            flagged.update(int(i) for i in st.flagged_ids)
        self.flagged_ids_ = np.array(sorted(flagged), dtype=np.int64)
        self.keep_mask_ = ~np.isin(table.id, self.flagged_ids_)
        return self

    def transform(self, X):
        if not hasattr(self, "keep_mask_"):
            raise TripTimeError("filter is not fitted; call fit() first")
        table = check_trips(X)
        if len(table) != len(self.input_ids_) or not np.array_equal(table.id, self.input_ids_):
            raise ValueError("transform() must receive the trips the filter was fitted on")
        return table.select(self.keep_mask_)

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)
