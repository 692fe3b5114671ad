import dataclasses

import numpy as np
import pytest

from subpricer.errors import MissingSegmentPrice, UnknownScenarioKind
from subpricer.panel import aggregate_segment
from subpricer.synthgen import (
    GenConfig,
    GroundTruth,
    apply_stress,
    generate_churn_rows,
    generate_population,
    simulate_market,
    standard_population,
)


@dataclasses.dataclass(frozen=True)
class Scenario:
    kind: str
    severity: float


def tiny_cfg(**kw):
    base = dict(n_segments=3, n_periods=30, seasonal_period=6, seed=42)
    base.update(kw)
    return GenConfig(**base)


class TestGenerate:
    def test_same_seed_bit_exact(self):
        p1, t1 = generate_population(tiny_cfg())
        p2, t2 = generate_population(tiny_cfg())
        assert p1 == p2
        assert t1 == t2

    def test_different_seed_differs(self):
        p1, _ = generate_population(tiny_cfg(seed=1))
        p2, _ = generate_population(tiny_cfg(seed=2))
        assert p1 != p2

    def test_noise_free_log_linear(self):
        cfg = tiny_cfg(
            noise_sigma=0.0,
            seasonal_amplitudes=((0.0, 0.0),),
            gamma=(0.0, 0.0, 0.0, 0.0),
        )
        panel, truth = generate_population(cfg)
        for i, seg in enumerate(truth.segments):
            s = aggregate_segment(panel, seg)
            slope = np.polyfit(np.log(s.prices), np.log(s.quantities), 1)[0]
            assert slope == pytest.approx(truth.beta[i], abs=1e-9)

    def test_degenerate_population_variance(self):
        _, truth = generate_population(tiny_cfg(sigma_beta=0.0, mu_beta=-1.2))
        assert all(b == pytest.approx(-1.2) for b in truth.beta)

    def test_churn_never_exceeds_quantity(self):
        panel, _ = generate_population(tiny_cfg(n_segments=5, n_periods=60))
        for r in panel.records:
            assert r.churned <= r.quantity

    def test_panel_passes_core_validation(self):
        panel, truth = generate_population(tiny_cfg())
        assert panel.segments == truth.segments
        assert panel.period_range == (1, 30)

    def test_ols_recovery_feasibility(self):
        # noise 0.05, 200 periods, 30% experiments: log-log OLS (with the true
        # covariates and seasonal terms in the design) pins each beta +-0.05
        panel, truth = standard_population(seed=5)
        worst = 0.0
        for i, seg in enumerate(truth.segments):
            s = aggregate_segment(panel, seg)
            t = s.periods
            design = [np.ones(len(s)), np.log(s.prices)]
            for name in truth.covariate_names:
                design.append(s.covariates[name])
            for k in range(1, len(truth.seasonal_amplitudes) + 1):
                w = 2 * np.pi * k * t / truth.seasonal_period
                design.extend([np.cos(w), np.sin(w)])
            X = np.column_stack(design)
            coef, *_ = np.linalg.lstsq(X, np.log(s.quantities), rcond=None)
            worst = max(worst, abs(coef[1] - truth.beta[i]))
        assert worst < 0.05

    def test_truth_json_round_trip(self):
        _, truth = generate_population(tiny_cfg())
        back = GroundTruth.from_json(truth.to_json())
        assert back == truth


class TestSimulate:
    def test_price_at_cost_zero_profit(self):
        _, truth = generate_population(tiny_cfg())
        schedule = {s: truth.unit_cost for s in truth.segments}
        out = simulate_market(truth, schedule, horizon=6, seed=1)
        assert out.total_profit() == pytest.approx(0.0, abs=1e-9)

    def test_missing_segment_price(self):
        _, truth = generate_population(tiny_cfg())
        with pytest.raises(MissingSegmentPrice):
            simulate_market(truth, {truth.segments[0]: 10.0}, horizon=3, seed=1)

    def test_unit_elastic_revenue_invariance(self):
        # beta = -1 and churn-insensitive demand: doubling price leaves
        # expected revenue unchanged (checked by MC mean over many seeds)
        cfg = tiny_cfg(n_segments=1, mu_beta=-1.0, sigma_beta=0.0, noise_sigma=0.05)
        _, truth = generate_population(cfg)
        base = {truth.segments[0]: truth.base_price[0]}
        double = {truth.segments[0]: 2.0 * truth.base_price[0]}
        rev_b, rev_d = [], []
        for seed in range(1000):
            rev_b.append(simulate_market(truth, base, 1, seed).total_revenue())
            rev_d.append(simulate_market(truth, double, 1, seed).total_revenue())
        ratio = np.mean(rev_d) / np.mean(rev_b)
        se = np.std(np.array(rev_d) / np.mean(rev_b)) / np.sqrt(1000)
        assert abs(ratio - 1.0) < 4 * se + 0.01

    def test_deterministic_given_seed(self):
        _, truth = generate_population(tiny_cfg())
        sched = {s: p for s, p in zip(truth.segments, truth.base_price)}
        a = simulate_market(truth, sched, 6, seed=9)
        b = simulate_market(truth, sched, 6, seed=9)
        assert np.array_equal(a.profit, b.profit)
        assert np.array_equal(a.churned, b.churned)


class TestStress:
    def test_demand_shock_scales_quantity(self):
        _, truth = generate_population(tiny_cfg())
        stressed = apply_stress(truth, Scenario("demand_downturn", 0.20))
        seg = truth.segments[0]
        p = truth.base_price[0]
        assert stressed.expected_quantity(seg, p) == pytest.approx(
            0.80 * truth.expected_quantity(seg, p)
        )

    def test_cost_shock(self):
        _, truth = generate_population(tiny_cfg())
        truth = dataclasses.replace(truth, unit_cost=10.0)
        stressed = apply_stress(truth, Scenario("cost_inflation", 0.25))
        assert stressed.unit_cost == pytest.approx(12.5)

    def test_zero_severity_identity(self):
        _, truth = generate_population(tiny_cfg())
        for kind in ("demand_downturn", "cost_inflation", "competitor_cut"):
            assert apply_stress(truth, Scenario(kind, 0.0)) == truth

    def test_competitor_cut_shifts_covariate(self):
        _, truth = generate_population(tiny_cfg())
        stressed = apply_stress(truth, Scenario("competitor_cut", 0.15))
        assert stressed.shift_of("competitor_price") == pytest.approx(-0.15)

    def test_unknown_kind(self):
        _, truth = generate_population(tiny_cfg())
        with pytest.raises(UnknownScenarioKind):
            apply_stress(truth, Scenario("alien_invasion", 0.5))


class TestChurnRows:
    def test_labels_binary_and_deterministic(self):
        from subpricer.synthgen import default_churn_truth

        truth = default_churn_truth()
        a = generate_churn_rows(truth, 500, seed=4)
        b = generate_churn_rows(truth, 500, seed=4)
        assert np.array_equal(a.labels, b.labels)
        assert set(np.unique(a.labels)) <= {0.0, 1.0}
