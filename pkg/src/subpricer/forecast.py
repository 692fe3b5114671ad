"""Demand decomposition into trend + seasonal + covariate effects + noise.

Trend is damped Holt (double exponential) smoothing with its smoothing
constants grid-searched on one-step-ahead SSE of the seasonally adjusted
series; seasonality is a least-squares Fourier regression; remaining
structure is absorbed by gradient-boosted trees on the covariates. The
decomposition reconstructs the training series exactly, and residual
bootstrap turns the point forecast into calibrated intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import HorizonMismatch, SeriesTooShort, ValidationError, ZeroActual
from .panel import SegmentSeries
from .seeding import named_stream
from .trees import GbdtConfig, GradientBoostedTrees

_SMOOTHING_GRID = np.arange(0.1, 0.91, 0.1)


def fourier_design(periods: np.ndarray, seasonal_period: int, order: int) -> np.ndarray:
    """Harmonic columns cos/sin(2*pi*k*t/m) for k = 1..order."""
    t = np.asarray(periods, dtype=float)
    cols = []
    for k in range(1, order + 1):
        w = 2.0 * np.pi * k * t / seasonal_period
        cols.append(np.cos(w))
        cols.append(np.sin(w))
    return np.column_stack(cols) if cols else np.zeros((len(t), 0))


@dataclass(frozen=True)
class HoltParams:
    level_smoothing: float
    slope_smoothing: float
    damping: float


def _holt_init(y: np.ndarray, window: int) -> tuple[float, float]:
    """Level/slope start values from a least-squares line on the head."""
    m = min(len(y), max(window, 4))
    t = np.arange(m, dtype=float)
    if len(np.unique(y[:m])) == 1:
        return float(y[0]), 0.0
    slope, intercept = np.polyfit(t, y[:m], 1)
    # state convention: the first prediction is level + damping*slope
    return float(intercept - slope), float(slope)


def _holt_filter(
    y: np.ndarray, p: HoltParams, init: tuple[float, float]
) -> tuple[np.ndarray, float, float]:
    """One-step-ahead fitted values plus the final (level, slope) state."""
    level, slope = init
    fitted = np.empty(len(y))
    for t in range(len(y)):
        pred = level + p.damping * slope
        fitted[t] = pred
        err = y[t] - pred
        level = pred + p.level_smoothing * err
        slope = p.damping * slope + p.level_smoothing * p.slope_smoothing * err
    return fitted, float(level), float(slope)


def _fit_holt(
    y: np.ndarray, damping: float, init_window: int
) -> tuple[HoltParams, np.ndarray, float, float]:
    init = _holt_init(y, init_window)
    best: tuple[float, HoltParams] | None = None
    for a in _SMOOTHING_GRID:
        for b in _SMOOTHING_GRID:
            params = HoltParams(float(a), float(b), damping)
            fitted, _, _ = _holt_filter(y, params, init)
            sse = float(np.sum((y - fitted) ** 2))
            if best is None or sse < best[0] - 1e-15:
                best = (sse, params)
    params = best[1]
    fitted, level, slope = _holt_filter(y, params, init)
    return params, fitted, level, slope


def _holt_extrapolate(level: float, slope: float, damping: float, horizon: int) -> np.ndarray:
    steps = np.cumsum(damping ** np.arange(1, horizon + 1))
    return level + steps * slope


@dataclass(frozen=True)
class ForecastDecomposition:
    trend: np.ndarray
    seasonal: np.ndarray
    covariate_effect: np.ndarray
    residuals: np.ndarray

    def reconstruction(self) -> np.ndarray:
        return self.trend + self.seasonal + self.covariate_effect + self.residuals


@dataclass
class DemandModel:
    """Fitted decomposition, ready for extrapolation and simulation."""

    segment_id: str
    train_periods: np.ndarray
    period_step: int
    holt: HoltParams
    level: float
    slope: float
    seasonal_period: int
    fourier_order: int
    fourier_coef: np.ndarray
    gbdt: GradientBoostedTrees
    covariate_names: tuple[str, ...]
    decomposition: ForecastDecomposition

    def future_periods(self, horizon: int) -> np.ndarray:
        last = int(self.train_periods[-1])
        return last + self.period_step * np.arange(1, horizon + 1)

    def predict_mean(self, horizon: int, covariate_future: np.ndarray | None = None) -> np.ndarray:
        horizon = int(horizon)
        X = self._future_matrix(horizon, covariate_future)
        trend = _holt_extrapolate(self.level, self.slope, self.holt.damping, horizon)
        seasonal = fourier_design(
            self.future_periods(horizon), self.seasonal_period, self.fourier_order
        ) @ self.fourier_coef
        return trend + seasonal + self.gbdt.predict(X)

    def _future_matrix(self, horizon: int, covariate_future) -> np.ndarray:
        k = len(self.covariate_names)
        if k == 0:
            return np.zeros((horizon, 0))
        if covariate_future is None:
            raise HorizonMismatch("model uses covariates; covariate_future required")
        X = np.asarray(covariate_future, dtype=float)
        if X.shape != (horizon, k):
            raise HorizonMismatch(f"covariate_future must be ({horizon}, {k}), got {X.shape}")
        return X


def fit_demand_model(
    series: SegmentSeries,
    seasonal_period: int,
    fourier_order: int = 3,
    gbdt: GbdtConfig | None = None,
    seed: int = 0,
    damping: float = 0.98,
    target: np.ndarray | None = None,
) -> DemandModel:
    """Fit the additive decomposition on one segment's demand series.

    The trend's smoothing constants are grid-searched on the seasonally
    adjusted series (a preliminary Fourier fit provides the adjustment) so
    the trend does not swallow periodic structure; the final seasonal
    component is re-fit on the detrended series, keeping the decomposition
    exactly additive.
    """
    y = np.asarray(target if target is not None else series.quantities, dtype=float)
    n = len(y)
    if n < 2 * seasonal_period:
        raise SeriesTooShort(f"need >= {2 * seasonal_period} observations, got {n}")
    gbdt = gbdt or GbdtConfig()
    periods = series.periods
    diffs = np.diff(periods)
    step = int(np.median(diffs)) if len(diffs) else 1

    # preliminary seasonal estimate: harmonics alongside an intercept and a
    # linear term, so trend level/growth does not leak into the harmonics
    harm = fourier_design(periods, seasonal_period, fourier_order)
    t_norm = (periods - periods[0]) / max(n - 1, 1)
    pre_design = np.column_stack([np.ones(n), t_norm, harm])
    pre_coef, *_ = np.linalg.lstsq(pre_design, y, rcond=None)
    seasonal0 = harm @ pre_coef[2:]

    holt_params, fitted, level, slope = _fit_holt(y - seasonal0, damping, 2 * seasonal_period)
    trend = fitted

    detrended = y - trend
    coef, *_ = np.linalg.lstsq(harm, detrended, rcond=None) if harm.size else (np.zeros(0),)
    coef = np.asarray(coef)
    seasonal = harm @ coef if harm.size else np.zeros(n)

    resid = detrended - seasonal
    names = tuple(sorted(series.covariates))
    X = series.covariate_matrix(names)
    booster = GradientBoostedTrees(gbdt).fit(X, resid, rng=named_stream(seed, "gbdt"))
    covariate_effect = booster.predict(X)
    eps = resid - covariate_effect

    return DemandModel(
        segment_id=series.segment_id,
        train_periods=periods.copy(),
        period_step=step,
        holt=holt_params,
        level=level,
        slope=slope,
        seasonal_period=seasonal_period,
        fourier_order=fourier_order,
        fourier_coef=coef,
        gbdt=booster,
        covariate_names=names,
        decomposition=ForecastDecomposition(
            trend=trend, seasonal=seasonal, covariate_effect=covariate_effect, residuals=eps
        ),
    )


@dataclass(frozen=True)
class ProbabilisticForecast:
    horizon: int
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    n_draws: int

    def __post_init__(self) -> None:
        if not 0.0 < self.level < 1.0:
            raise ValidationError("level must be in (0, 1)")
        if not (self.lower <= self.mean + 1e-12).all() or not (self.mean <= self.upper + 1e-12).all():
            raise ValidationError("intervals must bracket the mean")


def predict_with_intervals(
    model: DemandModel,
    horizon: int,
    covariate_future: np.ndarray | None = None,
    n_draws: int = 500,
    level: float = 0.9,
    seed: int = 0,
) -> ProbabilisticForecast:
    """Point forecast plus empirical residual-bootstrap interval bands.

    Future paths re-run the trend recursion with iid resamples of the
    centered training residuals as innovations, so the bands widen with
    horizon as level/slope uncertainty accumulates. Bands are the
    (1 +- level)/2 path quantiles, widened if necessary to contain the
    point forecast.
    """
    horizon = int(horizon)
    if horizon <= 0:
        raise HorizonMismatch("horizon must be positive")
    mean = model.predict_mean(horizon, covariate_future)
    base = mean - _holt_extrapolate(model.level, model.slope, model.holt.damping, horizon)
    pool = model.decomposition.residuals
    pool = pool - pool.mean() if len(pool) else np.zeros(1)
    rng = named_stream(seed, "bootstrap", model.segment_id)

    n_draws = int(n_draws)
    hp = model.holt
    lvl = np.full(n_draws, model.level)
    slp = np.full(n_draws, model.slope)
    draws = np.empty((n_draws, horizon))
    for h in range(horizon):
        e = rng.choice(pool, size=n_draws, replace=True)
        pred = lvl + hp.damping * slp
        draws[:, h] = pred + base[h] + e
        lvl = pred + hp.level_smoothing * e
        slp = hp.damping * slp + hp.level_smoothing * hp.slope_smoothing * e

    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    lower = np.minimum(np.quantile(draws, lo_q, axis=0), mean)
    upper = np.maximum(np.quantile(draws, hi_q, axis=0), mean)
    return ProbabilisticForecast(
        horizon=horizon, mean=mean, lower=lower, upper=upper,
        level=float(level), n_draws=int(n_draws),
    )


@dataclass(frozen=True)
class ForecastMetrics:
    mape: float
    rmse: float
    icp: float | None = None

    def __post_init__(self) -> None:
        if self.mape < 0 or self.rmse < 0:
            raise ValidationError("mape and rmse are non-negative")
        if self.icp is not None and not 0.0 <= self.icp <= 1.0:
            raise ValidationError("icp must lie in [0, 1]")

    def to_json(self) -> dict:
        return {"mape": self.mape, "rmse": self.rmse, "icp": self.icp}


def evaluate_forecast(
    mean: np.ndarray,
    actual: np.ndarray,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
) -> ForecastMetrics:
    """MAPE (percent), RMSE, and interval coverage when bands are supplied."""
    mean = np.asarray(mean, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if mean.shape != actual.shape:
        raise HorizonMismatch(f"length mismatch {mean.shape} vs {actual.shape}")
    if np.any(actual == 0.0):
        raise ZeroActual("MAPE undefined with zero actuals")
    mape = float(np.mean(np.abs(actual - mean) / np.abs(actual)) * 100.0)
    rmse = float(np.sqrt(np.mean((actual - mean) ** 2)))
    icp = None
    if lower is not None and upper is not None:
        icp = float(np.mean((actual >= np.asarray(lower)) & (actual <= np.asarray(upper))))
    return ForecastMetrics(mape=mape, rmse=rmse, icp=icp)


def forecast_report(segment: str, fc: ProbabilisticForecast, metrics: ForecastMetrics | None = None) -> dict:
    """The wire/report shape for one segment's forecast."""
    return {
        "segment": segment,
        "horizon": fc.horizon,
        "mean": [float(v) for v in fc.mean],
        "lower": [float(v) for v in fc.lower],
        "upper": [float(v) for v in fc.upper],
        "level": fc.level,
        "metrics": metrics.to_json() if metrics else None,
    }
