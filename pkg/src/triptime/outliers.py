"""Robust linear regression over correlated trip-feature pairs.

The error of y = w1*x + w2 is modeled as a two-component mixture: Gaussian
N(0, s2) with probability (1 - p) for regular trips, Student-t (nu = 3,
scale c * sqrt(s2) with c > 1) with probability p for anomalies. The
variance-inflated contamination component is essential: with equal scales
the heavy-tailed component wins all over the bulk of real (heteroskedastic)
trip data and p degenerates to its upper clamp.

Fitting is EM with the t component expanded through its Gamma scale-mixture
representation, which makes every M-step an exact maximizer of the expected
complete-data log-likelihood and therefore keeps the observed
log-likelihood nondecreasing at every iteration:

  E-step:  t_i = p f_T(e_i) / (p f_T(e_i) + (1-p) f_G(e_i))      (outlier score)
           u_i = (nu + 1) / (nu + e_i^2 / (c^2 s2))              (t precision)
  M-step:  weights w_i = (1 - t_i) + t_i u_i / c^2
           (w1, w2) by weighted least squares, s2 = sum(w_i e_i^2) / n,
           p = clamp(mean(t_i))

The highest-scoring round(p*N) trips are flagged, and a pipeline of feature
pairs refits each stage on the survivors of the previous one.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import TripTable, endpoint_l1_miles
from .errors import InsufficientDataError
from .index import as_trip_table

FEATURES = ("duration", "distance", "fare", "endpoint_l1_distance")


@dataclass(frozen=True)
class FeaturePair:
    x_feature: str
    y_feature: str

    def __post_init__(self) -> None:
        for name in (self.x_feature, self.y_feature):
            if name not in FEATURES:
                raise ValueError(f"unknown feature {name!r}; expected one of {FEATURES}")
        if self.x_feature == self.y_feature:
            raise ValueError("x_feature and y_feature must differ")

    def __str__(self) -> str:
        return f"{self.x_feature}:{self.y_feature}"

    @classmethod
    def parse(cls, text: str) -> "FeaturePair":
        x, _, y = text.partition(":")
        return cls(x.strip(), y.strip())


def default_feature_pairs(with_fare: bool = True) -> list[FeaturePair]:
    """Default pipeline order: speed consistency, fare consistency, then
    detour detection against the straight-line endpoint distance."""
    pairs = [FeaturePair("distance", "duration")]
    if with_fare:
        pairs += [FeaturePair("fare", "duration"), FeaturePair("fare", "distance")]
    pairs += [
        FeaturePair("endpoint_l1_distance", "distance"),
        FeaturePair("endpoint_l1_distance", "duration"),
    ]
    return pairs


def feature_values(table: TripTable, name: str) -> np.ndarray:
    if name == "duration":
        return table.duration
    if name == "distance":
        return table.distance
    if name == "fare":
        if not np.isfinite(table.fare).all():
            raise InsufficientDataError("fare is not available for every trip")
        return table.fare
    if name == "endpoint_l1_distance":
        return endpoint_l1_miles(table)
    raise ValueError(f"unknown feature {name!r}")


@dataclass
class OutlierModel:
    pair: FeaturePair
    omega1: float
    omega2: float
    sigma2: float
    p_outlier: float
    nu: float
    t_scale: float              # contamination scale multiplier c
    scores: np.ndarray          # per-trip outlier probability, input order
    trip_ids: np.ndarray
    loglik_trace: np.ndarray
    converged: bool


def fit_outlier_model(trips, pair: FeaturePair, nu: float = 3.0,
                      t_scale: float = 10.0, p_init: float = 0.05,
                      p_bounds: tuple[float, float] = (0.001, 0.30),
                      tol: float = 1e-6, max_iter: int = 200) -> OutlierModel:
    """EM fit of the Gaussian/t mixture regression for one feature pair."""
    table = as_trip_table(trips)
    n = len(table)
    if n < 100:
        raise InsufficientDataError(f"need at least 100 trips to fit an outlier model, got {n}")
    x = np.asarray(feature_values(table, pair.x_feature), dtype=np.float64)
    y = np.asarray(feature_values(table, pair.y_feature), dtype=np.float64)

    # Ordinary least squares initialization.
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 0:
        raise InsufficientDataError(f"feature {pair.x_feature} has no variance")
    w1 = float(np.sum((x - xm) * (y - ym)) / sxx)
    w2 = ym - w1 * xm
    eps = y - w1 * x - w2
    s2 = float(np.mean(eps ** 2))
    p = p_init

    floor = 1e-12 * (float(np.var(y)) + 1.0)
    if s2 <= floor:
        # Perfect linear fit: nothing to separate.
        return OutlierModel(pair=pair, omega1=w1, omega2=w2, sigma2=max(s2, 0.0),
                            p_outlier=p_bounds[0], nu=nu, t_scale=t_scale,
                            scores=np.zeros(n), trip_ids=table.id.copy(),
                            loglik_trace=np.empty(0), converged=True)

    c2 = t_scale * t_scale
    trace = []
    converged = False
    ti = np.zeros(n)
    for _ in range(max_iter):
        sd = math.sqrt(s2)
        log_g = stats.norm.logpdf(eps, scale=sd) + math.log1p(-p)
        log_t = stats.t.logpdf(eps, df=nu, scale=t_scale * sd) + math.log(p)
        denom = np.logaddexp(log_g, log_t)
        ti = np.exp(log_t - denom)
        loglik = float(denom.sum())
        if trace and abs(loglik - trace[-1]) < tol:
            trace.append(loglik)
            converged = True
            break
        trace.append(loglik)

        u = (nu + 1.0) / (nu + eps ** 2 / (c2 * s2))
        w = (1.0 - ti) + ti * u / c2
        sw = float(w.sum())
        swx = float(np.dot(w, x))
        swy = float(np.dot(w, y))
        swxx = float(np.dot(w, x * x))
        swxy = float(np.dot(w, x * y))
        det = sw * swxx - swx * swx
        if det > 0:
            w1 = (sw * swxy - swx * swy) / det
            w2 = (swy - w1 * swx) / sw
        eps = y - w1 * x - w2
        s2 = max(float(np.dot(w, eps ** 2) / n), floor)
        p = min(max(float(ti.mean()), p_bounds[0]), p_bounds[1])

    if not converged:
        warnings.warn(
            f"outlier EM for {pair} did not converge in {max_iter} iterations", stacklevel=2)
        # Align the reported scores with the final parameters.
        sd = math.sqrt(s2)
        log_g = stats.norm.logpdf(eps, scale=sd) + math.log1p(-p)
        log_t = stats.t.logpdf(eps, df=nu, scale=t_scale * sd) + math.log(p)
        ti = np.exp(log_t - np.logaddexp(log_g, log_t))
    return OutlierModel(pair=pair, omega1=w1, omega2=w2, sigma2=s2, p_outlier=p,
                        nu=nu, t_scale=t_scale, scores=ti, trip_ids=table.id.copy(),
                        loglik_trace=np.array(trace), converged=converged)


def flag_outliers(model: OutlierModel, trips) -> set[int]:
    """Ids of the round(p * N) highest-scoring trips; ties resolved by
    ascending trip id so the cut is deterministic."""
    table = as_trip_table(trips)
    if len(table) != len(model.scores) or not np.array_equal(table.id, model.trip_ids):
        raise ValueError("model was fitted on a different trip set")
    n = len(table)
    k = int(math.floor(model.p_outlier * n + 0.5))
    if k == 0:
        return set()
    order = np.lexsort((table.id, -model.scores))
    return set(int(i) for i in table.id[order[:k]])


@dataclass
class FilterStage:
    pair: FeaturePair
    model: OutlierModel
    flagged_ids: np.ndarray


def filter_pipeline(trips, pairs, **fit_kwargs) -> tuple[TripTable, list[FilterStage]]:
    """Apply feature-pair filters in order, refitting each on the survivors
    of the previous stage; the union of flagged trips is removed."""
    if not pairs:
        raise ValueError("pairs must be nonempty")
    table = as_trip_table(trips)
    stages: list[FilterStage] = []
    for pair in pairs:
        model = fit_outlier_model(table, pair, **fit_kwargs)
        flagged = flag_outliers(model, table)
        stages.append(FilterStage(
            pair=pair, model=model,
            flagged_ids=np.array(sorted(flagged), dtype=np.int64)))
        if flagged:
            keep = ~np.isin(table.id, stages[-1].flagged_ids)
            table = table.select(keep)
    return table, stages


def stages_to_json(stages: list[FilterStage]) -> str:
    """Audit record: fitted parameters and flagged ids per stage."""
    payload = []
    for st in stages:
        payload.append({
            "pair": str(st.pair),
            "omega1": st.model.omega1,
            "omega2": st.model.omega2,
            "sigma2": st.model.sigma2,
            "p_outlier": st.model.p_outlier,
            "nu": st.model.nu,
            "converged": st.model.converged,
            "n_flagged": int(len(st.flagged_ids)),
            "flagged_ids": [int(i) for i in st.flagged_ids],
        })
    return json.dumps(payload, indent=2)
