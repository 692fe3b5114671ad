"""Shared builders for optimizer-style test instances."""

import numpy as np

from subpricer.churn import ChurnModel
from subpricer.elasticity import ElasticityEstimate, ParamSummary
from subpricer.optimizer import (
    GuardrailConfig,
    PricingProblem,
    ReferencePoint,
    build_problem,
    grid_oracle,
)
from subpricer.seeding import named_stream


def summary(mean: float, sd: float = 0.05) -> ParamSummary:
    return ParamSummary(mean=mean, sd=sd, lo=mean - 2 * sd, hi=mean + 2 * sd)


def flat_churn(theta0: float = -40.0, theta1: float = 0.0) -> ChurnModel:
    """Churn model with no feature terms; theta0=-40 means ~zero churn."""
    return ChurnModel(theta0, theta1, 0.0, np.zeros(0), 0.0, 0.0, ())


def make_problem(
    betas,
    costs,
    bounds,
    alphas=None,
    churn=None,
    churn_max=1.0,
    margin_min=0.0,
    volume_min=0.0,
    fairness=(),
) -> PricingProblem:
    """Assemble a small PricingProblem from plain numbers."""
    segs = [f"s{i}" for i in range(len(betas))]
    alphas = alphas if alphas is not None else [np.log(1000.0)] * len(segs)
    estimates = {
        s: ElasticityEstimate(segment=s, beta=summary(b), alpha=summary(a), gamma={})
        for s, b, a in zip(segs, betas, alphas)
    }
    reference = {s: ReferencePoint(prev_price=bounds[0][0], features={}, tenure=0.0) for s in segs}
    guardrails = GuardrailConfig(
        price_bounds={s: bounds[i] for i, s in enumerate(segs)},
        churn_max=churn_max,
        margin_min=margin_min,
        volume_min=volume_min,
        fairness_pairs=tuple(fairness),
    )
    return build_problem(
        estimates,
        churn or flat_churn(),
        {s: c for s, c in zip(segs, costs)},
        guardrails,
        reference,
    )


def random_problem(seed: int, max_segments: int = 3) -> PricingProblem:
    """Seeded random 1-3 segment instance, resampled until grid-feasible."""
    for attempt in range(20):
        rng = named_stream(seed, "prob", attempt)
        S = int(rng.integers(1, max_segments + 1))
        betas = rng.uniform(-3.0, -0.8, S)
        costs = rng.uniform(5.0, 20.0, S)
        lo = costs * rng.uniform(1.05, 1.3, S)
        hi = costs * rng.uniform(2.5, 4.5, S)
        margin_min = float(rng.uniform(0.0, 0.4) * np.min(lo - costs))
        q0 = rng.uniform(50.0, 500.0, S)
        alphas = np.log(q0) - betas * np.log(2.0 * costs)
        theta0 = float(rng.uniform(-5.0, -2.5))
        theta1 = float(rng.uniform(0.005, 0.08))
        churn = flat_churn(theta0, theta1)

        def churn_at(p):
            return 1.0 / (1.0 + np.exp(-(theta0 + theta1 * p)))

        churn_max = {}
        volume_min = {}
        for i in range(S):
            if rng.random() < 0.5:
                anchor = lo[i] + rng.uniform(0.4, 1.0) * (hi[i] - lo[i])
                churn_max[f"s{i}"] = float(min(max(churn_at(anchor), 1e-3), 1.0))
            else:
                churn_max[f"s{i}"] = 1.0
            if rng.random() < 0.4:
                anchor = lo[i] + rng.uniform(0.5, 0.95) * (hi[i] - lo[i])
                volume_min[f"s{i}"] = float(np.exp(alphas[i]) * anchor ** betas[i])
        fairness = []
        if S >= 2 and rng.random() < 0.5:
            fairness.append(("s0", "s1", float(rng.uniform(1.05, 1.6))))
        problem = make_problem(
            betas=betas,
            costs=costs,
            bounds=list(zip(lo, hi)),
            alphas=alphas,
            churn=churn,
            churn_max=churn_max,
            margin_min=margin_min,
            volume_min=volume_min,
            fairness=fairness,
        )
        oracle = grid_oracle(problem, grid_points_per_dim=41)
        if oracle.metadata.get("feasible_grid_points", 1) > 0:
            return problem
    raise RuntimeError(f"could not build a feasible instance for seed {seed}")
