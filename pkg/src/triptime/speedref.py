"""Temporal speed references.

Two flavors: a *relative* reference folds trips into a weekly window of
``period_slots`` slots and stores the mean per-trip speed of each slot; an
*absolute* reference keeps one value per slot on the unfolded timeline and
extends past the end of the data by forecasting the seasonal difference
(slot value minus value one period earlier) with an AR-style model fitted
by conditional least squares.

Serving goes through :class:`SpeedReference.value_at`, whose fallback chain
is: requested slot -> same relative slot's mean -> global mean speed. The
chain only fails when the reference saw no trips at all.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import TimeSlotConfig, slots_of_arrays
from .errors import (
    EmptyDatasetError,
    HorizonTooFarError,
    NoReferenceAvailableError,
    SeriesTooShortError,
    SingularSystemError,
)
from .index import as_trip_table


@dataclass
class RelativeReference:
    """Mean slot speeds over the folded weekly window."""

    values: np.ndarray   # length period_slots, NaN where no support
    counts: np.ndarray
    config: TimeSlotConfig


@dataclass
class AbsoluteSeries:
    """Per-slot mean speeds on the unfolded timeline; NaN marks missing slots."""

    start_slot: int
    values: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def last_slot(self) -> int:
        return self.start_slot + len(self.values) - 1


@dataclass
class ArimaModel:
    """AR(p) on the d-th difference with optional MA(q), fitted by
    conditional least squares; no constant term."""

    order: tuple[int, int, int]
    phi: np.ndarray
    theta: np.ndarray
    sigma2: float
    season_period: int
    stationary: bool = True
    aic: float = float("nan")


def fit_relative(trips, cfg: TimeSlotConfig, min_support: int = 1) -> RelativeReference:
    """Mean per-trip speed (miles/hour) for each relative slot."""
    table = as_trip_table(trips)
    if len(table) == 0:
        raise EmptyDatasetError("cannot fit a speed reference on zero trips")
    _, rel = slots_of_arrays(table.start, cfg)
    t = cfg.period_slots
    counts = np.bincount(rel, minlength=t).astype(np.int64)
    sums = np.bincount(rel, weights=table.speed_mph, minlength=t)
    values = np.full(t, np.nan)
    ok = counts >= max(min_support, 1)
    values[ok] = sums[ok] / counts[ok]
    return RelativeReference(values=values, counts=counts, config=cfg)


def build_absolute_series(trips, cfg: TimeSlotConfig, min_support: int = 1) -> AbsoluteSeries:
    """Mean per-trip speed per absolute slot, trimmed to the populated range."""
    table = as_trip_table(trips)
    if len(table) == 0:
        raise EmptyDatasetError("cannot build an absolute series on zero trips")
    abs_slots, _ = slots_of_arrays(table.start, cfg)
    start = int(abs_slots.min())
    m = int(abs_slots.max()) - start + 1
    idx = abs_slots - start
    counts = np.bincount(idx, minlength=m).astype(np.int64)
    sums = np.bincount(idx, weights=table.speed_mph, minlength=m)
    values = np.full(m, np.nan)
    ok = counts >= max(min_support, 1)
    values[ok] = sums[ok] / counts[ok]
    populated = np.flatnonzero(ok)
    if len(populated) == 0:
        raise SeriesTooShortError("no slot meets the support threshold")
    lo, hi = populated[0], populated[-1] + 1
    return AbsoluteSeries(start_slot=start + int(lo), values=values[lo:hi], counts=counts[lo:hi])


def seasonal_difference(series: AbsoluteSeries, period: int) -> np.ndarray:
    """Y_t = V_t - V_{t-period}; missing whenever either operand is missing.

    Element ``k`` corresponds to absolute slot ``series.start_slot + period + k``.
    """
    if len(series) <= period:
        raise SeriesTooShortError(
            f"series of {len(series)} slots cannot be differenced at period {period}")
    return series.values[period:] - series.values[:-period]


def interpolate_missing(values: np.ndarray, max_gap: int) -> tuple[np.ndarray, np.ndarray]:
    """Linearly fill interior NaN runs of length <= ``max_gap``.

    Returns (filled values, interpolated-slot flags); longer gaps raise
    :class:`SeriesTooShortError`. Endpoints must be observed.
    """
    values = np.asarray(values, dtype=np.float64)
    flags = np.isnan(values)
    if not flags.any():
        return values.copy(), flags
    if flags[0] or flags[-1]:
        raise SeriesTooShortError("series endpoints are missing; trim before interpolating")
    idx = np.arange(len(values))
    obs = ~flags
    gaps = np.diff(idx[obs])
    if gaps.max() - 1 > max_gap:
        raise SeriesTooShortError(
            f"missing run of {gaps.max() - 1} slots exceeds the {max_gap}-slot interpolation limit")
    filled = values.copy()
    filled[flags] = np.interp(idx[flags], idx[obs], values[obs])
    return filled, flags


def fit_arima(y: np.ndarray, order: tuple[int, int, int] = (2, 1, 0),
              season_period: int = 168, css_rounds: int = 20) -> ArimaModel:
    """Conditional-least-squares fit of an AR(p)/MA(q) model on the d-th
    difference of ``y``. With q = 0 this is one linear system; q > 0 uses
    iterated CSS with re-estimated residuals (best effort).
    """
    p, d, q = order
    if d not in (0, 1):
        raise ValueError("d must be 0 or 1")
    if p < 0 or q < 0:
        raise ValueError("order components must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    if np.isnan(y).any():
        raise ValueError("series contains missing values; interpolate before fitting")
    if len(y) < 10 * (p + d + q + 1):
        raise SeriesTooShortError(
            f"need at least {10 * (p + d + q + 1)} observations for order {order}, got {len(y)}")

    w = np.diff(y, d) if d else y.copy()
    n = len(w)
    phi = np.zeros(p)
    theta = np.zeros(q)
    if p + q > 0:
        eps = np.zeros(n)
        m = max(p, q)
        rounds = css_rounds if q > 0 else 1
        for _ in range(rounds):
            cols = [w[m - 1 - i:n - 1 - i] for i in range(p)]
            cols += [eps[m - 1 - j:n - 1 - j] for j in range(q)]
            design = np.column_stack(cols)
            target = w[m:]
            try:
                coef, *_ = np.linalg.lstsq(design, target, rcond=None)
            except np.linalg.LinAlgError as exc:
                raise SingularSystemError("least-squares fit failed") from exc
            phi = coef[:p]
            theta = coef[p:]
            eps = _residuals(w, phi, theta)
            if q == 0:
                break
        resid = eps[max(p, q):]
    else:
        resid = w
    sigma2 = float(np.mean(resid ** 2)) if len(resid) else 0.0

    stationary = True
    if p > 0 and np.any(phi != 0):
        # Roots of 1 - phi_1 z - ... - phi_p z^p must lie outside the unit circle.
        roots = np.roots(np.concatenate(([1.0], -phi))[::-1])
        stationary = bool(np.all(np.abs(roots) > 1.0))
        if not stationary:
            warnings.warn("fitted AR polynomial is not stationary", stacklevel=2)
    k = p + q
    aic = n * math.log(sigma2) + 2 * k if sigma2 > 0 else -math.inf
    return ArimaModel(order=(p, d, q), phi=phi, theta=theta, sigma2=sigma2,
                      season_period=season_period, stationary=stationary, aic=aic)


def _residuals(w: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Forward one-step residuals with zero pre-sample values."""
    p, q = len(phi), len(theta)
    n = len(w)
    eps = np.zeros(n)
    for t in range(n):
        pred = 0.0
        for i in range(p):
            if t - 1 - i >= 0:
                pred += phi[i] * w[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                pred += theta[j] * eps[t - 1 - j]
        eps[t] = w[t] - pred
    return eps


def select_arima_order(y: np.ndarray, season_period: int = 168,
                       p_values=(0, 1, 2, 3), d_values=(0, 1),
                       q_values=(0, 1)) -> tuple[int, int, int]:
    """Grid search over small orders by AIC; ties go to the smaller model."""
    best, best_aic = None, math.inf
    for d in d_values:
        for p in p_values:
            for q in q_values:
                try:
                    with warnings.catch_warnings():
                        # candidate fits may be non-stationary; only the
                        # winner's diagnostics matter
                        warnings.simplefilter("ignore")
                        model = fit_arima(y, (p, d, q), season_period)
                except (SeriesTooShortError, SingularSystemError):
                    continue
                if model.aic < best_aic - 1e-12:
                    best, best_aic = (p, d, q), model.aic
    if best is None:
        raise SeriesTooShortError("no ARIMA order could be fitted on this series")
    return best


def forecast_seasonal_path(y: np.ndarray, model: ArimaModel, steps: int) -> np.ndarray:
    """Forecast the next ``steps`` values of the differenced-seasonal series
    ``y`` by recursing the fitted model with future shocks at their zero
    expectation."""
    p, d, q = model.order
    w = list(np.diff(y, d) if d else y)
    eps = list(_residuals(np.asarray(w), model.phi, model.theta)) if (p or q) else [0.0] * len(w)
    n_obs = len(w)
    for t in range(n_obs, n_obs + steps):
        pred = 0.0
        for i in range(p):
            if t - 1 - i >= 0:
                pred += model.phi[i] * w[t - 1 - i]
        for j in range(q):
            k = t - 1 - j
            pred += model.theta[j] * (eps[k] if 0 <= k < n_obs else 0.0)
        w.append(pred)
        eps.append(0.0)
    w_future = np.array(w[n_obs:])
    if d == 0:
        return w_future
    return y[-1] + np.cumsum(w_future)


def forecast_speed(series: AbsoluteSeries, model: ArimaModel, target_slot: int,
                   max_gap: int | None = None) -> float:
    """V_hat at an unobserved absolute slot: forecast the seasonal difference
    and add back the value one period earlier.

    The horizon is capped at one season; beyond that the required lagged
    value is itself unobserved and :class:`HorizonTooFarError` is raised.
    """
    period = model.season_period
    h = target_slot - series.last_slot
    if h < 1:
        raise ValueError("target slot must be beyond the observed series")
    if h > period:
        raise HorizonTooFarError(
            f"target is {h} slots past the series end; the horizon is one season ({period})")
    if max_gap is None:
        max_gap = period // 2
    filled, _ = interpolate_missing(series.values, max_gap)
    if len(filled) <= period:
        raise SeriesTooShortError("need more than one season of history to forecast")
    y = filled[period:] - filled[:-period]
    path = forecast_seasonal_path(y, model, h)
    lag_index = target_slot - period - series.start_slot
    return float(path[-1] + filled[lag_index])


@dataclass
class SpeedReference:
    """Serving object for V(s): relative or absolute with forecasting."""

    mode: str                      # "relative" | "absolute"
    config: TimeSlotConfig
    relative: RelativeReference
    global_mean: float
    series: AbsoluteSeries | None = None
    filled: np.ndarray | None = None
    interpolated: np.ndarray | None = None
    arima: ArimaModel | None = None
    _forecast: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def horizon_slot(self) -> int:
        """Last absolute slot servable without falling back."""
        if self.mode != "absolute" or self.series is None:
            return -1
        return self.series.last_slot + self.config.period_slots

    def ensure_forecast_through(self, slot: int) -> None:
        """Precompute the forecast extension up to ``slot`` (capped at one
        season); call before sharing the reference across workers."""
        if self.mode != "absolute" or self.series is None or self.arima is None:
            return
        steps = min(slot, self.horizon_slot) - self.series.last_slot
        if steps <= 0 or len(self._forecast) >= steps:
            return
        period = self.config.period_slots
        y = self.filled[period:] - self.filled[:-period]
        path = forecast_seasonal_path(y, self.arima, steps)
        lag = self.series.last_slot + 1 - period - self.series.start_slot
        self._forecast = path + self.filled[lag:lag + steps]

    def values_at(self, starts: np.ndarray, strict: bool = False) -> np.ndarray:
        """Vectorized V(s) for epoch seconds ``starts``.

        With ``strict=True`` unservable slots come back NaN instead of
        walking the fallback chain (used by the region-pair layer).
        """
        starts = np.atleast_1d(np.asarray(starts, dtype=np.float64))
        abs_slots, rel_slots = slots_of_arrays(starts, self.config)
        if self.mode == "relative":
            vals = self.relative.values[rel_slots]
        else:
            vals = np.full(len(starts), np.nan)
            s0, s1 = self.series.start_slot, self.series.last_slot
            hist = (abs_slots >= s0) & (abs_slots <= s1)
            vals[hist] = self.series.values[abs_slots[hist] - s0]
            future = abs_slots > s1
            if future.any():
                self.ensure_forecast_through(int(abs_slots.max()))
                reach = future & (abs_slots <= s1 + len(self._forecast))
                vals[reach] = self._forecast[abs_slots[reach] - s1 - 1]
        if strict:
            return vals
        gap = np.isnan(vals)
        if gap.any():
            vals[gap] = self.relative.values[rel_slots[gap]]
            gap = np.isnan(vals)
            if gap.any():
                vals[gap] = self.global_mean
        return vals

    def value_at(self, s: float) -> float:
        v = float(self.values_at(np.array([s]))[0])
        if not np.isfinite(v) or v <= 0:
            raise NoReferenceAvailableError(f"no speed reference available at t={s}")
        return v


def lookup(reference: SpeedReference, s: float) -> float:
    """V(s) through the fallback chain; errors only if the chain is empty."""
    return reference.value_at(s)


def fit_reference(trips, cfg: TimeSlotConfig, mode: str = "relative",
                  slot_min_support: int = 1,
                  arima_order: tuple[int, int, int] = (2, 1, 0),
                  auto_order: bool = False) -> SpeedReference:
    """Fit a servable speed reference of the requested mode."""
    if mode not in ("relative", "absolute"):
        raise ValueError(f"unknown reference mode {mode!r}")
    table = as_trip_table(trips)
    if len(table) == 0:
        raise EmptyDatasetError("cannot fit a speed reference on zero trips")
    relative = fit_relative(table, cfg, min_support=slot_min_support)
    global_mean = float(table.speed_mph.mean())
    ref = SpeedReference(mode=mode, config=cfg, relative=relative, global_mean=global_mean)
    if mode == "absolute":
        series = build_absolute_series(table, cfg, min_support=slot_min_support)
        filled, flags = interpolate_missing(series.values, cfg.period_slots // 2)
        if len(filled) <= cfg.period_slots:
            raise SeriesTooShortError(
                "absolute reference needs more than one season of history")
        y = filled[cfg.period_slots:] - filled[:-cfg.period_slots]
        order = select_arima_order(y, cfg.period_slots) if auto_order else arima_order
        ref.series = series
        ref.filled = filled
        ref.interpolated = flags
        ref.arima = fit_arima(y, order, cfg.period_slots)
    return ref


def export_reference_csv(ref: SpeedReference, path) -> None:
    """Write (slot, value, count, interpolated) rows for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "value", "count", "interpolated"])
        if ref.mode == "relative":
            for k, (v, c) in enumerate(zip(ref.relative.values, ref.relative.counts)):
                writer.writerow([k, "" if math.isnan(v) else repr(float(v)), int(c), 0])
        else:
            s = ref.series
            for i, (v, c, f) in enumerate(zip(s.values, s.counts, ref.interpolated)):
                out = ref.filled[i] if f else v
                writer.writerow([s.start_slot + i,
                                 "" if math.isnan(out) else repr(float(out)),
                                 int(c), int(f)])


def import_reference_csv(path, cfg: TimeSlotConfig, mode: str = "relative") -> SpeedReference:
    """Rebuild a serving reference from an exported CSV.

    Absolute references round-trip their observed values only; refit from
    trips when forecasting is needed.
    """
    slots, values, counts = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            slots.append(int(row["slot"]))
            values.append(float(row["value"]) if row["value"] else np.nan)
            counts.append(int(row["count"]))
    values_arr = np.array(values)
    counts_arr = np.array(counts, dtype=np.int64)
    finite = values_arr[np.isfinite(values_arr)]
    if len(finite) == 0:
        raise NoReferenceAvailableError("reference CSV has no populated slots")
    weights = counts_arr[np.isfinite(values_arr)]
    global_mean = float(np.average(finite, weights=np.maximum(weights, 1)))
    if mode == "relative":
        rel = RelativeReference(values=values_arr, counts=counts_arr, config=cfg)
        return SpeedReference(mode="relative", config=cfg, relative=rel, global_mean=global_mean)
    t = cfg.period_slots
    rel_vals = np.full(t, np.nan)
    rel_counts = np.zeros(t, dtype=np.int64)
    rel = RelativeReference(values=rel_vals, counts=rel_counts, config=cfg)
    series = AbsoluteSeries(start_slot=slots[0], values=values_arr, counts=counts_arr)
    return SpeedReference(mode="absolute", config=cfg, relative=rel,
                          global_mean=global_mean, series=series)
