"""Monte Carlo stress testing: scenario ladders, risk envelopes, alerts.

Each (scenario, strategy) cell simulates the market n_mc times under the
stressed ground truth and summarizes profit and churn distributions. The
performance index is scenario profit divided by the same strategy's
unstressed baseline profit (the report states this definition, since the
index is what the envelope charts plot on their y-axis).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ValidationError
from .seeding import stream_key
from .synthgen import GroundTruth, PriceSchedule, RealizedOutcomes, apply_stress, simulate_market

SEVERE_SEVERITIES = {
    "demand_downturn": 0.20,
    "competitor_cut": 0.15,
    "cost_inflation": 0.25,
}
_LABEL_SCALE = {"mild": 1.0 / 3.0, "moderate": 2.0 / 3.0, "severe": 1.0}


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    severity: float
    label: str = "custom"

    def __post_init__(self) -> None:
        if not 0.0 <= self.severity <= 1.0:
            raise ValidationError(f"severity must be in [0, 1], got {self.severity}")

    @property
    def key(self) -> str:
        return f"{self.kind}/{self.label}"


def standard_scenarios() -> list[ScenarioSpec]:
    """The three severe shocks plus mild/moderate scalings at 1/3 and 2/3."""
    out = []
    for kind, severe in SEVERE_SEVERITIES.items():
        for label, scale in _LABEL_SCALE.items():
            out.append(ScenarioSpec(kind=kind, severity=severe * scale, label=label))
    return out


@dataclass(frozen=True)
class AlertConfig:
    churn_spike_threshold: float = 0.02   # absolute churn-rate increase
    profit_drawdown_threshold: float = 0.15  # relative to running peak
    lead_periods: int = 3

    def __post_init__(self) -> None:
        if self.churn_spike_threshold <= 0 or self.profit_drawdown_threshold <= 0:
            raise ValidationError("alert thresholds must be > 0")
        if self.lead_periods <= 0:
            raise ValidationError("lead_periods must be > 0")


@dataclass(frozen=True)
class CellSummary:
    profit_mean: float
    profit_p5: float
    profit_p95: float
    churn_mean: float
    churn_p5: float
    churn_p95: float
    performance_index: float
    performance_index_se: float

    def __post_init__(self) -> None:
        if self.profit_p5 > self.profit_p95 or self.churn_p5 > self.churn_p95:
            raise ValidationError("percentiles out of order")
        if self.performance_index < 0:
            raise ValidationError("performance_index must be >= 0")

    def to_json(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class RiskEnvelope:
    scenarios: tuple[ScenarioSpec, ...]
    strategies: tuple[str, ...]
    cells: dict[tuple[str, str], CellSummary]  # (scenario key, strategy)
    baseline_profit: dict[str, float]
    baseline_profit_se: dict[str, float]
    n_mc: int

    def cell(self, scenario_key: str, strategy: str) -> CellSummary:
        return self.cells[(scenario_key, strategy)]

    def to_json(self) -> dict:
        return {
            "definition": "performance_index = scenario profit / baseline profit (same strategy)",
            "n_mc": self.n_mc,
            "strategies": list(self.strategies),
            "scenarios": [
                {"kind": s.kind, "severity": s.severity, "label": s.label} for s in self.scenarios
            ],
            "baseline_profit": {k: float(v) for k, v in self.baseline_profit.items()},
            "cells": {
                f"{key[0]}|{key[1]}": cell.to_json() for key, cell in sorted(self.cells.items())
            },
        }


def _summaries(profits: np.ndarray, churns: np.ndarray, baseline: float, baseline_se: float) -> CellSummary:
    p5, p95 = np.percentile(profits, [5.0, 95.0])
    c5, c95 = np.percentile(churns, [5.0, 95.0])
    mean = float(profits.mean())
    se = float(profits.std(ddof=1) / np.sqrt(len(profits))) if len(profits) > 1 else 0.0
    pi = mean / baseline if baseline > 0 else 0.0
    pi_se = 0.0
    if baseline > 0:
        pi_se = abs(pi) * float(np.sqrt((se / max(mean, 1e-12)) ** 2 + (baseline_se / baseline) ** 2))
    return CellSummary(
        profit_mean=mean,
        profit_p5=float(p5),
        profit_p95=float(p95),
        churn_mean=float(churns.mean()),
        churn_p5=float(c5),
        churn_p95=float(c95),
        performance_index=max(pi, 0.0),
        performance_index_se=pi_se,
    )


def _mc_run(truth: GroundTruth, schedule: PriceSchedule, horizon: int, n_mc: int,
            seed: int, *tag) -> tuple[np.ndarray, np.ndarray]:
    profits = np.empty(n_mc)
    churns = np.empty(n_mc)
    for r in range(n_mc):
        out = simulate_market(truth, schedule, horizon, stream_key(seed, *tag, r))
        profits[r] = out.total_profit()
        churns[r] = out.mean_churn_rate()
    return profits, churns


def run_stress(
    truth: GroundTruth,
    strategies: Mapping[str, PriceSchedule | Callable[[GroundTruth], PriceSchedule]],
    scenarios: list[ScenarioSpec] | None = None,
    n_mc: int = 200,
    horizon: int = 6,
    seed: int = 0,
) -> RiskEnvelope:
    """Simulate every (scenario, strategy) cell; deterministic given seed.

    Strategy callables are resolved once against the unstressed truth: the
    point of the exercise is how a fixed price book weathers the shock.
    """
    if n_mc < 100:
        raise ValidationError("n_mc must be >= 100 for stable envelope percentiles")
    scenarios = scenarios if scenarios is not None else standard_scenarios()
    schedules: dict[str, PriceSchedule] = {}
    for name, strat in strategies.items():
        schedules[name] = strat(truth) if callable(strat) else strat

    baseline_profit: dict[str, float] = {}
    baseline_se: dict[str, float] = {}
    for name, sched in schedules.items():
        profits, _ = _mc_run(truth, sched, horizon, n_mc, seed, "baseline", name)
        baseline_profit[name] = float(profits.mean())
        baseline_se[name] = float(profits.std(ddof=1) / np.sqrt(n_mc))

    cells: dict[tuple[str, str], CellSummary] = {}
    for scn in scenarios:
        stressed = apply_stress(truth, scn)
        for name, sched in schedules.items():
            profits, churns = _mc_run(stressed, sched, horizon, n_mc, seed, scn.key, name)
            cells[(scn.key, name)] = _summaries(
                profits, churns, baseline_profit[name], baseline_se[name]
            )

    return RiskEnvelope(
        scenarios=tuple(scenarios),
        strategies=tuple(schedules),
        cells=cells,
        baseline_profit=baseline_profit,
        baseline_profit_se=baseline_se,
        n_mc=n_mc,
    )


@dataclass(frozen=True)
class Alert:
    segment: str
    metric: str  # churn_spike | profit_drawdown
    trigger_period: int
    value: float
    threshold: float

    def to_json(self) -> dict:
        return {
            "segment": self.segment,
            "metric": self.metric,
            "trigger_period": self.trigger_period,
            "value": float(self.value),
            "threshold": float(self.threshold),
        }


def early_warning(
    envelope: RiskEnvelope | None,
    observed: RealizedOutcomes,
    cfg: AlertConfig,
) -> list[Alert]:
    """First-crossing alerts on rolling churn spikes and profit drawdowns.

    Churn is compared against the mean of the first lead_periods periods;
    drawdown against the running profit peak. Crossings fire on >= (the
    boundary case alerts). The envelope, when given, only annotates lead
    time expectations; detection is purely observational.
    """
    if observed.horizon < cfg.lead_periods:
        raise ValidationError("observed span shorter than lead_periods")
    alerts: list[Alert] = []
    rates = observed.churn_rates()
    for i, seg in enumerate(observed.segments):
        baseline = float(rates[i, : cfg.lead_periods].mean())
        for t in range(cfg.lead_periods, observed.horizon):
            jump = float(rates[i, t] - baseline)
            if jump >= cfg.churn_spike_threshold:
                alerts.append(Alert(seg, "churn_spike", t, jump, cfg.churn_spike_threshold))
                break
        peak = -np.inf
        for t in range(observed.horizon):
            profit = float(observed.profit[i, t])
            peak = max(peak, profit)
            if peak > 0 and t >= cfg.lead_periods:
                dd = (peak - profit) / peak
                if dd >= cfg.profit_drawdown_threshold:
                    alerts.append(Alert(seg, "profit_drawdown", t, dd, cfg.profit_drawdown_threshold))
                    break
    return alerts


def envelope_table(envelope: RiskEnvelope) -> str:
    """Plain-text ladder: scenarios down, strategies across, index in cells."""
    lines = ["performance index = scenario profit / baseline profit (same strategy)", ""]
    header = f"{'scenario':<22}{'severity':>9}  " + "".join(
        f"{s:>18}" for s in envelope.strategies
    )
    lines.append(header)
    lines.append("-" * len(header))
    for scn in envelope.scenarios:
        row = f"{scn.kind + '/' + scn.label:<22}{scn.severity:>9.3f}  "
        for strat in envelope.strategies:
            cell = envelope.cell(scn.key, strat)
            row += f"{cell.performance_index:>18.4f}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def write_envelope_csv(envelope: RiskEnvelope, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "scenario_kind", "label", "severity", "strategy", "profit_mean",
            "profit_p5", "profit_p95", "churn_mean", "performance_index",
        ])
        for scn in envelope.scenarios:
            for strat in envelope.strategies:
                c = envelope.cell(scn.key, strat)
                writer.writerow([
                    scn.kind, scn.label, scn.severity, strat, c.profit_mean,
                    c.profit_p5, c.profit_p95, c.churn_mean, c.performance_index,
                ])
