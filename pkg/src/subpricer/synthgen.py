"""Synthetic subscription populations with known ground truth.

The generating process is the same log-log demand equation the estimators
assume (log Q = alpha + beta*log P + gamma.Z + seasonal + noise, with beta
drawn per segment from a population normal), plus a lagged logistic churn
process. Ground truth is retained so parameter-recovery and strategy tests
have exact oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .churn import ChurnDataset, ChurnModel, sigmoid
from .errors import MissingSegmentPrice, UnknownScenarioKind, ValidationError
from .panel import (
    CATEGORICAL,
    NUMERIC,
    FeatureSpec,
    SubscriptionPanel,
    SubscriptionRecord,
    build_panel,
)
from .seeding import named_stream

# Covariates every synthetic population carries. competitor_price is a log
# price index so stress shifts act in relative terms.
COVARIATE_NAMES = ("usage_intensity", "support_tickets", "marketing_flag", "competitor_price")
DEFAULT_GAMMA = (0.08, -0.05, 0.10, 0.30)
DEFAULT_CHURN_THETA3 = (-0.35, 0.25, -0.10, -0.50)

PriceSchedule = Mapping[str, float]


@dataclass(frozen=True)
class GenConfig:
    n_segments: int = 50
    n_periods: int = 200
    seasonal_period: int = 12
    experiment_fraction: float = 0.3
    perturbation_sd: float = 0.05
    seed: int = 0
    # population design knobs
    mu_beta: float = -1.5
    sigma_beta: float = 0.4
    noise_sigma: float = 0.05
    base_price_range: tuple[float, float] = (20.0, 60.0)
    base_quantity_range: tuple[float, float] = (200.0, 1000.0)
    walk_sd: float = 0.075
    walk_reversion: float = 0.97  # AR(1) pull toward the anchor price
    seasonal_amplitudes: tuple[tuple[float, float], ...] = ((0.05, 0.03),)
    unit_cost: float = 12.0
    gamma: tuple[float, ...] = DEFAULT_GAMMA

    def __post_init__(self) -> None:
        if self.n_segments <= 0 or self.n_periods <= 0:
            raise ValidationError("n_segments and n_periods must be positive")
        if self.seasonal_period < 2:
            raise ValidationError("seasonal_period must be >= 2")
        if not 0.0 <= self.experiment_fraction <= 1.0:
            raise ValidationError("experiment_fraction must be in [0, 1]")
        if self.perturbation_sd < 0 or self.noise_sigma < 0:
            raise ValidationError("perturbation_sd and noise_sigma must be >= 0")
        if self.sigma_beta < 0:
            raise ValidationError("sigma_beta must be >= 0")


@dataclass(frozen=True)
class GroundTruth:
    """True generating parameters of a synthetic population."""

    segments: tuple[str, ...]
    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    base_price: tuple[float, ...]
    tenure0: tuple[float, ...]
    gamma: tuple[float, ...]               # shared covariate effects
    covariate_names: tuple[str, ...]
    seasonal_amplitudes: tuple[tuple[float, float], ...]
    seasonal_period: int
    noise_sigma: float
    churn: ChurnModel                      # true theta0..theta4
    unit_cost: float
    population_mu_beta: float
    population_sigma_beta: float
    covariate_shifts: tuple[tuple[str, float], ...] = ()
    gen: GenConfig = field(default_factory=GenConfig)

    def __post_init__(self) -> None:
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")

    def index(self, segment: str) -> int:
        try:
            return self.segments.index(segment)
        except ValueError:
            raise MissingSegmentPrice(f"unknown segment {segment!r}") from None

    def shift_of(self, name: str) -> float:
        return dict(self.covariate_shifts).get(name, 0.0)

    def expected_quantity(self, segment: str, price: float, covariates: Mapping[str, float] | None = None) -> float:
        """Noise-free demand at given price (seasonal term at its mean, zero)."""
        i = self.index(segment)
        z = 0.0
        if covariates:
            z = sum(g * covariates.get(n, 0.0) for g, n in zip(self.gamma, self.covariate_names))
        return float(np.exp(self.alpha[i] + self.beta[i] * np.log(price) + z))

    def to_json(self) -> dict:
        return {
            "segments": list(self.segments),
            "alpha": list(self.alpha),
            "beta": list(self.beta),
            "base_price": list(self.base_price),
            "tenure0": list(self.tenure0),
            "gamma": list(self.gamma),
            "covariate_names": list(self.covariate_names),
            "seasonal_amplitudes": [list(p) for p in self.seasonal_amplitudes],
            "seasonal_period": self.seasonal_period,
            "noise_sigma": self.noise_sigma,
            "churn": self.churn.to_json(),
            "unit_cost": self.unit_cost,
            "population_mu_beta": self.population_mu_beta,
            "population_sigma_beta": self.population_sigma_beta,
            "covariate_shifts": [list(p) for p in self.covariate_shifts],
            "gen": self.gen.__dict__ | {
                "base_price_range": list(self.gen.base_price_range),
                "base_quantity_range": list(self.gen.base_quantity_range),
                "seasonal_amplitudes": [list(p) for p in self.gen.seasonal_amplitudes],
                "gamma": list(self.gen.gamma),
            },
        }

    @staticmethod
    def from_json(payload: dict | str) -> "GroundTruth":
        if isinstance(payload, str):
            payload = json.loads(payload)
        gen_raw = dict(payload["gen"])
        gen_raw["base_price_range"] = tuple(gen_raw["base_price_range"])
        gen_raw["base_quantity_range"] = tuple(gen_raw["base_quantity_range"])
        gen_raw["seasonal_amplitudes"] = tuple(tuple(p) for p in gen_raw["seasonal_amplitudes"])
        gen_raw["gamma"] = tuple(gen_raw["gamma"])
        return GroundTruth(
            segments=tuple(payload["segments"]),
            alpha=tuple(payload["alpha"]),
            beta=tuple(payload["beta"]),
            base_price=tuple(payload["base_price"]),
            tenure0=tuple(payload["tenure0"]),
            gamma=tuple(payload["gamma"]),
            covariate_names=tuple(payload["covariate_names"]),
            seasonal_amplitudes=tuple(tuple(p) for p in payload["seasonal_amplitudes"]),
            seasonal_period=int(payload["seasonal_period"]),
            noise_sigma=float(payload["noise_sigma"]),
            churn=ChurnModel.from_json(payload["churn"]),
            unit_cost=float(payload["unit_cost"]),
            population_mu_beta=float(payload["population_mu_beta"]),
            population_sigma_beta=float(payload["population_sigma_beta"]),
            covariate_shifts=tuple((n, float(v)) for n, v in payload["covariate_shifts"]),
            gen=GenConfig(**gen_raw),
        )


def default_churn_truth(covariate_names: tuple[str, ...] = COVARIATE_NAMES) -> ChurnModel:
    """Plausible churn parameters: ~3% monthly base churn, price-sensitive."""
    theta1, theta2 = 0.05, -0.025
    theta3 = dict(zip(COVARIATE_NAMES, DEFAULT_CHURN_THETA3))
    return ChurnModel(
        theta0=-4.2,
        theta1=theta1,
        theta2=theta2,
        theta3=np.array([theta3.get(n, 0.0) for n in covariate_names]),
        theta4=-0.015,
        l1_lambda=0.0,
        feature_names=covariate_names,
    )


def _seasonal_term(periods: np.ndarray, amplitudes, m: int) -> np.ndarray:
    s = np.zeros(len(periods), dtype=float)
    for k, (a, b) in enumerate(amplitudes, start=1):
        w = 2.0 * np.pi * k * periods / m
        s += a * np.cos(w) + b * np.sin(w)
    return s


def _draw_covariates(rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
    return {
        "usage_intensity": rng.normal(0.0, 1.0, n),
        "support_tickets": rng.normal(0.0, 1.0, n),
        "marketing_flag": rng.binomial(1, 0.3, n).astype(float),
        "competitor_price": rng.normal(0.0, 0.15, n),
    }


def generate_population(cfg: GenConfig) -> tuple[SubscriptionPanel, GroundTruth]:
    """Simulate a panel and return it with its generating parameters.

    Deterministic given cfg.seed; every random quantity flows from a named
    sub-stream so segments can be regenerated independently.
    """
    seed = cfg.seed
    seg_ids = tuple(f"seg{i:03d}" for i in range(cfg.n_segments))
    pop = named_stream(seed, "population")
    betas = np.clip(pop.normal(cfg.mu_beta, cfg.sigma_beta, cfg.n_segments), -3.5, -0.3)
    lo_p, hi_p = cfg.base_price_range
    base_prices = np.exp(pop.uniform(np.log(lo_p), np.log(hi_p), cfg.n_segments))
    lo_q, hi_q = cfg.base_quantity_range
    base_q = np.exp(pop.uniform(np.log(lo_q), np.log(hi_q), cfg.n_segments))
    alphas = np.log(base_q) - betas * np.log(base_prices)
    tenure0 = pop.uniform(5.0, 25.0, cfg.n_segments)
    churn_truth = default_churn_truth()

    truth = GroundTruth(
        segments=seg_ids,
        alpha=tuple(float(a) for a in alphas),
        beta=tuple(float(b) for b in betas),
        base_price=tuple(float(p) for p in base_prices),
        tenure0=tuple(float(t) for t in tenure0),
        gamma=cfg.gamma,
        covariate_names=COVARIATE_NAMES,
        seasonal_amplitudes=cfg.seasonal_amplitudes,
        seasonal_period=cfg.seasonal_period,
        noise_sigma=cfg.noise_sigma,
        churn=churn_truth,
        unit_cost=cfg.unit_cost,
        population_mu_beta=cfg.mu_beta,
        population_sigma_beta=cfg.sigma_beta,
        gen=cfg,
    )

    gamma = np.asarray(cfg.gamma)
    periods = np.arange(1, cfg.n_periods + 1)
    seasonal = _seasonal_term(periods, cfg.seasonal_amplitudes, cfg.seasonal_period)

    records: list[SubscriptionRecord] = []
    for i, seg in enumerate(seg_ids):
        srng = named_stream(seed, "segment", seg)
        # slow mean-reverting walk around the anchor price, plus randomized
        # experiment perturbations (the exogenous variation identifying beta)
        steps = srng.normal(0.0, cfg.walk_sd, cfg.n_periods)
        walk = np.empty(cfg.n_periods)
        level = 0.0
        for t in range(cfg.n_periods):
            level = cfg.walk_reversion * level + steps[t]
            walk[t] = level
        is_exp = srng.random(cfg.n_periods) < cfg.experiment_fraction
        perturb = np.where(is_exp, srng.normal(0.0, cfg.perturbation_sd, cfg.n_periods), 0.0)
        log_p = np.log(base_prices[i]) + walk + perturb
        prices = np.exp(log_p)

        cov = _draw_covariates(srng, cfg.n_periods)
        zmat = np.column_stack([cov[n] for n in COVARIATE_NAMES])
        eta = srng.normal(0.0, cfg.noise_sigma, cfg.n_periods)
        log_q = alphas[i] + betas[i] * log_p + zmat @ gamma + seasonal + eta
        quantities = np.exp(log_q)

        tenures = tenure0[i] + 0.25 * np.arange(cfg.n_periods)
        prev_prices = np.concatenate([[prices[0]], prices[:-1]])
        z_churn = churn_truth.logit(prices, prev_prices, zmat, tenures)
        churn_p = sigmoid(z_churn)
        n_subs = np.maximum(np.round(quantities).astype(int), 0)
        churned = srng.binomial(n_subs, churn_p).astype(float)
        churned = np.minimum(churned, quantities)

        for t in range(cfg.n_periods):
            records.append(
                SubscriptionRecord.make(
                    segment_id=seg,
                    period=int(periods[t]),
                    price=float(prices[t]),
                    quantity=float(quantities[t]),
                    covariates={n: float(cov[n][t]) for n in COVARIATE_NAMES},
                    unit_cost=cfg.unit_cost,
                    churned=float(churned[t]),
                    tenure=float(tenures[t]),
                )
            )

    schema = tuple(FeatureSpec(n, NUMERIC) for n in COVARIATE_NAMES)
    return build_panel(records, schema), truth


def standard_population(seed: int = 0) -> tuple[SubscriptionPanel, GroundTruth]:
    """The default 50-segment, 200-period population used across tests."""
    return generate_population(GenConfig(seed=seed))


@dataclass(frozen=True)
class RealizedOutcomes:
    """Per-segment, per-period market outcomes under a price schedule."""

    segments: tuple[str, ...]
    prices: np.ndarray       # (S,)
    quantities: np.ndarray   # (S, H)
    churned: np.ndarray      # (S, H)
    revenue: np.ndarray      # (S, H)
    profit: np.ndarray       # (S, H)

    @property
    def horizon(self) -> int:
        return self.quantities.shape[1]

    def churn_rates(self) -> np.ndarray:
        q = np.where(self.quantities > 0, self.quantities, np.inf)
        return self.churned / q

    def total_revenue(self) -> float:
        return float(self.revenue.sum())

    def total_profit(self) -> float:
        return float(self.profit.sum())

    def mean_churn_rate(self) -> float:
        return float(self.churned.sum() / max(self.quantities.sum(), 1e-12))


def simulate_market(
    truth: GroundTruth,
    schedule: PriceSchedule,
    horizon: int,
    seed: int,
) -> RealizedOutcomes:
    """Realize quantities, churn, revenue, and profit under a price schedule.

    Prices are held at the schedule for the whole horizon; the first period's
    lagged price is the segment's pre-change base price, so price increases
    incur the transition churn shock once.
    """
    missing = [s for s in truth.segments if s not in schedule]
    if missing:
        raise MissingSegmentPrice(f"schedule missing segments {missing}")
    S, H = len(truth.segments), int(horizon)
    gamma = np.asarray(truth.gamma)
    shifts = np.array([truth.shift_of(n) for n in truth.covariate_names])
    periods = np.arange(1, H + 1)
    seasonal = _seasonal_term(periods, truth.seasonal_amplitudes, truth.seasonal_period)

    prices = np.array([float(schedule[s]) for s in truth.segments])
    quantities = np.zeros((S, H))
    churned = np.zeros((S, H))
    for i, seg in enumerate(truth.segments):
        srng = named_stream(seed, "market", seg)
        cov = _draw_covariates(srng, H)
        zmat = np.column_stack([cov[n] for n in truth.covariate_names]) + shifts
        eta = srng.normal(0.0, truth.noise_sigma, H)
        log_q = truth.alpha[i] + truth.beta[i] * np.log(prices[i]) + zmat @ gamma + seasonal + eta
        q = np.exp(log_q)
        tenures = truth.tenure0[i] + 0.25 * np.arange(H)
        prev = np.concatenate([[truth.base_price[i]], np.full(H - 1, prices[i])])
        churn_p = sigmoid(truth.churn.logit(np.full(H, prices[i]), prev, zmat, tenures))
        n_subs = np.maximum(np.round(q).astype(int), 0)
        ch = np.minimum(srng.binomial(n_subs, churn_p).astype(float), q)
        quantities[i] = q
        churned[i] = ch

    qsafe = np.where(quantities > 0, quantities, np.inf)
    retention = 1.0 - churned / qsafe
    revenue = prices[:, None] * quantities
    profit = (prices - truth.unit_cost)[:, None] * quantities * retention
    return RealizedOutcomes(
        segments=truth.segments,
        prices=prices,
        quantities=quantities,
        churned=churned,
        revenue=revenue,
        profit=profit,
    )


def apply_stress(truth: GroundTruth, scenario) -> GroundTruth:
    """Return a stressed copy of the ground truth.

    demand_downturn scales baseline demand by (1 - severity); cost_inflation
    scales unit cost by (1 + severity); competitor_cut shifts the competitor
    log-price covariate down by severity.
    """
    kind = scenario.kind
    sev = float(scenario.severity)
    if not 0.0 <= sev <= 1.0:
        raise ValidationError(f"severity must be in [0, 1], got {sev}")
    if kind == "demand_downturn":
        if sev == 0.0:
            return truth
        shifted = tuple(float(a + np.log1p(-sev)) for a in truth.alpha)
        return replace(truth, alpha=shifted)
    if kind == "cost_inflation":
        return replace(truth, unit_cost=float(truth.unit_cost * (1.0 + sev)))
    if kind == "competitor_cut":
        if sev == 0.0:
            return truth
        shifts = dict(truth.covariate_shifts)
        shifts["competitor_price"] = shifts.get("competitor_price", 0.0) - sev
        return replace(truth, covariate_shifts=tuple(sorted(shifts.items())))
    raise UnknownScenarioKind(f"unknown scenario kind {kind!r}")


def generate_churn_rows(theta: ChurnModel, n_rows: int, seed: int) -> ChurnDataset:
    """Row-level Bernoulli churn draws from known coefficients.

    Current and lagged prices are drawn independently on [20, 60] so both
    price coefficients are identifiable; behavioral features are standard
    normal, tenure uniform on [2, 30].
    """
    rng = named_stream(seed, "churn-rows")
    prices = rng.uniform(20.0, 60.0, n_rows)
    prev = rng.uniform(20.0, 60.0, n_rows)
    X = rng.normal(0.0, 1.0, (n_rows, len(theta.feature_names)))
    tenure = rng.uniform(2.0, 30.0, n_rows)
    p = sigmoid(theta.logit(prices, prev, X, tenure))
    labels = (rng.random(n_rows) < p).astype(float)
    return ChurnDataset(
        prices=prices,
        prev_prices=prev,
        features=X,
        tenures=tenure,
        labels=labels,
        feature_names=theta.feature_names,
        window=3,
    )


def generate_cross_panel(
    e: np.ndarray,
    n_periods: int,
    seed: int,
    noise_sigma: float = 0.05,
    base_prices: tuple[float, ...] | None = None,
    correlate_prices: float = 0.0,
) -> SubscriptionPanel:
    """Multi-product panel with a known cross-elasticity matrix.

    Row i of ``e`` gives d log Q_i / d log p_j. Price paths are independent
    log random walks unless ``correlate_prices`` pushes them together.
    """
    e = np.asarray(e, dtype=float)
    m = e.shape[0]
    if e.shape != (m, m):
        raise ValidationError("elasticity matrix must be square")
    base = np.asarray(base_prices if base_prices is not None else np.full(m, 30.0))
    rng = named_stream(seed, "cross")
    common = np.cumsum(rng.normal(0.0, 0.03, n_periods))
    log_p = np.zeros((m, n_periods))
    for j in range(m):
        own = np.cumsum(rng.normal(0.0, 0.03, n_periods)) + rng.normal(0.0, 0.08, n_periods)
        log_p[j] = np.log(base[j]) + (1.0 - correlate_prices) * own + correlate_prices * common
    alphas = np.log(400.0) - e @ np.log(base)
    records = []
    for i in range(m):
        eta = rng.normal(0.0, noise_sigma, n_periods)
        log_q = alphas[i] + e[i] @ log_p + eta
        for t in range(n_periods):
            records.append(
                SubscriptionRecord.make(
                    segment_id=f"prod{i}",
                    period=t + 1,
                    price=float(np.exp(log_p[i, t])),
                    quantity=float(np.exp(log_q[t])),
                    covariates={},
                )
            )
    return build_panel(records, ())
