"""Guardrailed profit maximization over segment prices.

Maximizes sum_s (p_s - c_s) * Q_s(p_s) * (1 - Churn_s(p_s)) subject to churn
caps, margin floors, fairness ratio bounds, volume floors, and price boxes.
The solver is an augmented-Lagrangian outer loop with spectral projected
gradient inner iterations in log-price coordinates: margin floors and price
bounds become the projection box, fairness ratios become linear constraints,
and churn/volume stay as smooth nonlinear inequalities. A brute-force grid
oracle provides an independent check on small instances, and a conservative
fallback price vector is always constructible.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .churn import ChurnModel, sigmoid
from .elasticity import ElasticityEstimate
from .errors import (
    IncoherentBounds,
    MissingEstimate,
    TooManyDimensions,
    ValidationError,
)
from .seeding import named_stream


def _per_segment(value, segments: Sequence[str], name: str, fill: float | None = None) -> dict[str, float]:
    """Broadcast a scalar, or complete a per-segment map (with `fill` if allowed)."""
    if isinstance(value, Mapping):
        missing = [s for s in segments if s not in value]
        if missing and fill is None:
            raise MissingEstimate(f"{name} missing for segments {missing}")
        return {s: float(value.get(s, fill)) for s in segments}
    return {s: float(value) for s in segments}


@dataclass(frozen=True)
class GuardrailConfig:
    """Business constraints; scalars broadcast to every segment."""

    price_bounds: Mapping[str, tuple[float, float]] | tuple[float, float]
    churn_max: Mapping[str, float] | float = 1.0
    margin_min: float = 0.0
    volume_min: Mapping[str, float] | float = 0.0
    fairness_pairs: tuple[tuple[str, str, float], ...] = ()

    def __post_init__(self) -> None:
        if self.margin_min < 0:
            raise ValidationError("margin_min must be >= 0")
        for i, j, delta in self.fairness_pairs:
            if delta <= 0:
                raise ValidationError(f"fairness ratio bound must be > 0, got {delta} for ({i},{j})")

    def to_json(self) -> dict:
        bounds = self.price_bounds
        return {
            "price_bounds": {k: list(v) for k, v in bounds.items()} if isinstance(bounds, Mapping) else list(bounds),
            "churn_max": dict(self.churn_max) if isinstance(self.churn_max, Mapping) else self.churn_max,
            "margin_min": self.margin_min,
            "volume_min": dict(self.volume_min) if isinstance(self.volume_min, Mapping) else self.volume_min,
            "fairness_pairs": [list(p) for p in self.fairness_pairs],
        }

    @staticmethod
    def from_json(payload: dict) -> "GuardrailConfig":
        bounds = payload["price_bounds"]
        if isinstance(bounds, dict):
            bounds = {k: (float(v[0]), float(v[1])) for k, v in bounds.items()}
        else:
            bounds = (float(bounds[0]), float(bounds[1]))
        return GuardrailConfig(
            price_bounds=bounds,
            churn_max=payload.get("churn_max", 1.0),
            margin_min=float(payload.get("margin_min", 0.0)),
            volume_min=payload.get("volume_min", 0.0),
            fairness_pairs=tuple(
                (str(i), str(j), float(d)) for i, j, d in payload.get("fairness_pairs", ())
            ),
        )


@dataclass(frozen=True)
class ReferencePoint:
    """Per-segment evaluation context for demand and churn functions."""

    prev_price: float
    features: Mapping[str, float]
    tenure: float
    demand_covariates: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SolverConfig:
    n_starts: int = 10
    grad_tol: float = 1e-6
    constraint_tol: float = 1e-4
    max_outer_iter: int = 25
    max_inner_iter: int = 300
    penalty_growth: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise ValidationError("n_starts must be >= 1")
        if self.grad_tol <= 0 or self.constraint_tol <= 0:
            raise ValidationError("tolerances must be > 0")


@dataclass(frozen=True)
class ConstraintStatus:
    name: str
    value: float
    bound: float
    slack: float
    binding: bool

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "value": float(self.value),
            "bound": float(self.bound),
            "slack": float(self.slack),
            "binding": bool(self.binding),
        }


@dataclass(frozen=True)
class PricingProblem:
    """Vectorized instance of the constrained profit maximization."""

    segments: tuple[str, ...]
    demand_scale: np.ndarray      # A_s > 0
    beta: np.ndarray              # price elasticity (finite)
    cost: np.ndarray              # c_s >= 0
    churn_base: np.ndarray        # theta0 + theta2*prev + theta3.x + theta4*tenure
    churn_slope: float            # theta1 on the decision price
    lo: np.ndarray                # effective lower bound: max(p_lo, c + m)
    hi: np.ndarray
    raw_lo: np.ndarray            # configured p_lo, for reporting
    margin_min: float
    churn_cap: np.ndarray
    volume_min: np.ndarray
    fairness: tuple[tuple[int, int, float], ...]  # (i, j, log delta)

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def churn(self, prices: np.ndarray) -> np.ndarray:
        return sigmoid(self.churn_base + self.churn_slope * prices)

    def demand(self, prices: np.ndarray) -> np.ndarray:
        return self.demand_scale * prices**self.beta

    def profit_terms(self, prices: np.ndarray) -> np.ndarray:
        return (prices - self.cost) * self.demand(prices) * (1.0 - self.churn(prices))

    def objective(self, prices: np.ndarray) -> float:
        return float(self.profit_terms(prices).sum())

    def subproblem(self, idx: Sequence[int]) -> "PricingProblem":
        idx = np.asarray(idx, dtype=int)
        remap = {int(v): k for k, v in enumerate(idx)}
        pairs = tuple(
            (remap[i], remap[j], d) for i, j, d in self.fairness if i in remap and j in remap
        )
        return PricingProblem(
            segments=tuple(self.segments[int(v)] for v in idx),
            demand_scale=self.demand_scale[idx],
            beta=self.beta[idx],
            cost=self.cost[idx],
            churn_base=self.churn_base[idx],
            churn_slope=self.churn_slope,
            lo=self.lo[idx],
            hi=self.hi[idx],
            raw_lo=self.raw_lo[idx],
            margin_min=self.margin_min,
            churn_cap=self.churn_cap[idx],
            volume_min=self.volume_min[idx],
            fairness=pairs,
        )


def build_problem(
    estimates: Mapping[str, ElasticityEstimate],
    churn_model: ChurnModel,
    costs: Mapping[str, float] | float,
    guardrails: GuardrailConfig,
    reference: Mapping[str, ReferencePoint],
) -> PricingProblem:
    """Assemble the optimization instance from fitted models and guardrails."""
    segments = tuple(sorted(estimates))
    if not segments:
        raise MissingEstimate("no elasticity estimates supplied")
    missing_ref = [s for s in segments if s not in reference]
    if missing_ref:
        raise MissingEstimate(f"reference point missing for segments {missing_ref}")

    cost_map = _per_segment(costs, segments, "costs")
    cap_map = _per_segment(guardrails.churn_max, segments, "churn_max", fill=1.0)
    vol_map = _per_segment(guardrails.volume_min, segments, "volume_min", fill=0.0)
    if isinstance(guardrails.price_bounds, Mapping):
        missing_b = [s for s in segments if s not in guardrails.price_bounds]
        if missing_b:
            raise MissingEstimate(f"price bounds missing for segments {missing_b}")
        bounds = {s: guardrails.price_bounds[s] for s in segments}
    else:
        bounds = {s: guardrails.price_bounds for s in segments}

    A = np.empty(len(segments))
    beta = np.empty(len(segments))
    churn_base = np.empty(len(segments))
    for k, s in enumerate(segments):
        est = estimates[s]
        ref = reference[s]
        z = sum(
            est.gamma[name].mean * ref.demand_covariates.get(name, 0.0)
            for name in est.gamma
        )
        A[k] = np.exp(est.alpha.mean + z)
        beta[k] = est.beta.mean
        churn_base[k] = float(
            churn_model.theta0
            + churn_model.theta2 * ref.prev_price
            + churn_model._feature_vector(ref.features) @ churn_model.theta3
            + churn_model.theta4 * ref.tenure
        )
        if not np.isfinite(beta[k]) or not np.isfinite(A[k]) or A[k] <= 0:
            raise ValidationError(f"segment {s}: invalid demand parameters")

    cost = np.array([cost_map[s] for s in segments])
    raw_lo = np.array([bounds[s][0] for s in segments])
    hi = np.array([bounds[s][1] for s in segments])
    if np.any(raw_lo <= 0) or np.any(raw_lo > hi):
        raise ValidationError("need 0 < p_lo <= p_hi for every segment")
    lo = np.maximum(raw_lo, cost + guardrails.margin_min)
    bad = lo > hi + 1e-12
    if np.any(bad):
        names = [segments[i] for i in np.where(bad)[0]]
        raise IncoherentBounds(f"margin floor exceeds price cap for segments {names}")

    caps = np.array([cap_map[s] for s in segments])
    if np.any((caps <= 0) | (caps > 1)):
        raise ValidationError("churn_max must lie in (0, 1]")

    index = {s: k for k, s in enumerate(segments)}
    pairs = []
    for i, j, delta in guardrails.fairness_pairs:
        if i not in index or j not in index:
            raise MissingEstimate(f"fairness pair ({i}, {j}) references unknown segment")
        pairs.append((index[i], index[j], float(np.log(delta))))

    problem = PricingProblem(
        segments=segments,
        demand_scale=A,
        beta=beta,
        cost=cost,
        churn_base=churn_base,
        churn_slope=float(churn_model.theta1),
        lo=lo,
        hi=hi,
        raw_lo=raw_lo,
        margin_min=float(guardrails.margin_min),
        churn_cap=caps,
        volume_min=np.array([vol_map[s] for s in segments]),
        fairness=tuple(pairs),
    )
    for edge in (problem.lo, problem.hi):
        if not np.isfinite(problem.objective(edge)):
            raise ValidationError("objective not finite at the price bounds")
    return problem


# ---------------------------------------------------------------------------
# Constraint machinery (normalized so constraint_tol is meaningful)
# ---------------------------------------------------------------------------

def _constraint_values(problem: PricingProblem, u: np.ndarray) -> np.ndarray:
    """Stacked g(u) <= 0: churn caps, volume floors, fairness ratios."""
    p = np.exp(u)
    parts = []
    active = problem.churn_cap < 1.0 - 1e-12
    if np.any(active):
        parts.append(problem.churn(p)[active] - problem.churn_cap[active])
    vol = problem.volume_min > 0
    if np.any(vol):
        q = problem.demand(p)[vol]
        qmin = problem.volume_min[vol]
        parts.append((qmin - q) / np.maximum(qmin, 1.0))
    for i, j, logd in problem.fairness:
        parts.append(np.array([u[i] - u[j] - logd]))
    return np.concatenate(parts) if parts else np.zeros(0)


def _constraint_grads(problem: PricingProblem, u: np.ndarray) -> np.ndarray:
    """Jacobian rows of g in u coordinates (m, S)."""
    p = np.exp(u)
    S = problem.n_segments
    rows = []
    active = np.where(problem.churn_cap < 1.0 - 1e-12)[0]
    if len(active):
        ch = problem.churn(p)
        for s in active:
            row = np.zeros(S)
            row[s] = problem.churn_slope * ch[s] * (1.0 - ch[s]) * p[s]
            rows.append(row)
    vol = np.where(problem.volume_min > 0)[0]
    if len(vol):
        q = problem.demand(p)
        for s in vol:
            row = np.zeros(S)
            row[s] = -problem.beta[s] * q[s] / max(problem.volume_min[s], 1.0)
            rows.append(row)
    for i, j, _ in problem.fairness:
        row = np.zeros(S)
        row[i], row[j] = 1.0, -1.0
        rows.append(row)
    return np.vstack(rows) if rows else np.zeros((0, S))


def _objective_grad_u(problem: PricingProblem, u: np.ndarray) -> tuple[float, np.ndarray]:
    """Profit and its gradient with respect to u = log(p)."""
    p = np.exp(u)
    q = problem.demand(p)
    ch = problem.churn(p)
    margin = p - problem.cost
    f = float((margin * q * (1.0 - ch)).sum())
    grad = q * (1.0 - ch) * (p + margin * problem.beta - margin * problem.churn_slope * ch * p)
    return f, grad


def constraint_report(
    problem: PricingProblem, prices: np.ndarray, tol: float = 1e-4
) -> list[ConstraintStatus]:
    """Every guardrail evaluated at the given prices, with slack and binding flags."""
    p = np.asarray(prices, dtype=float)
    ch = problem.churn(p)
    q = problem.demand(p)
    report: list[ConstraintStatus] = []
    for k, s in enumerate(problem.segments):
        cap = problem.churn_cap[k]
        if cap < 1.0 - 1e-12:
            slack = float(cap - ch[k])
            report.append(ConstraintStatus(f"churn_max[{s}]", float(ch[k]), float(cap), slack, slack <= tol))
        margin = float(p[k] - problem.cost[k])
        slack = margin - problem.margin_min
        report.append(
            ConstraintStatus(f"margin_min[{s}]", margin, problem.margin_min, float(slack), slack <= tol * max(1.0, problem.cost[k]))
        )
        if problem.volume_min[k] > 0:
            qmin = problem.volume_min[k]
            slack = float(q[k] - qmin)
            report.append(
                ConstraintStatus(f"volume_min[{s}]", float(q[k]), float(qmin), slack, slack <= tol * max(qmin, 1.0))
            )
        lo, hi = problem.raw_lo[k], problem.hi[k]
        report.append(ConstraintStatus(f"price_lo[{s}]", float(p[k]), float(lo), float(p[k] - lo), p[k] - lo <= tol * lo))
        report.append(ConstraintStatus(f"price_hi[{s}]", float(p[k]), float(hi), float(hi - p[k]), hi - p[k] <= tol * hi))
    for i, j, logd in problem.fairness:
        ratio = float(p[i] / p[j])
        delta = float(np.exp(logd))
        log_slack = logd - (np.log(p[i]) - np.log(p[j]))
        report.append(
            ConstraintStatus(
                f"fairness[{problem.segments[i]}/{problem.segments[j]}]",
                ratio, delta, float(delta - ratio), log_slack <= tol,
            )
        )
    return report


def max_violation(problem: PricingProblem, prices: np.ndarray) -> float:
    """Largest normalized guardrail violation at the given prices (0 if feasible)."""
    u = np.log(np.asarray(prices, dtype=float))
    g = _constraint_values(problem, u)
    box = np.maximum(problem.lo - prices, prices - problem.hi)
    box = box / np.maximum(problem.lo, 1.0)
    worst = max(float(np.max(g, initial=0.0)), float(np.max(box, initial=0.0)))
    return max(worst, 0.0)


@dataclass(frozen=True)
class PricingSolution:
    prices: dict[str, float]
    objective_value: float
    constraint_report: list[ConstraintStatus]
    status: str  # optimal | feasible_suboptimal | fallback
    starts_used: int
    solve_time: float
    iterations: int = 0
    metadata: dict = field(default_factory=dict)

    def price_vector(self, segments: Sequence[str]) -> np.ndarray:
        return np.array([self.prices[s] for s in segments])

    def to_json(self) -> dict:
        return {
            "prices": {s: float(p) for s, p in self.prices.items()},
            "objective": float(self.objective_value),
            "status": self.status,
            "constraints": [c.to_json() for c in self.constraint_report],
            "starts_used": self.starts_used,
        }


def solution_json_bytes(solution: PricingSolution) -> bytes:
    """Canonical wire encoding: key order fixed, no volatile timing fields."""
    return json.dumps(solution.to_json(), separators=(",", ":"), sort_keys=False).encode()


def fallback(problem: PricingProblem, tol: float = 1e-4) -> PricingSolution:
    """Conservative cost-plus prices, always constructible within the box.

    Churn caps can still be violated here; the report flags them so the
    governance layer can open an override ticket.
    """
    t0 = time.perf_counter()
    prices = np.clip(np.maximum(problem.cost + problem.margin_min, problem.raw_lo),
                     problem.raw_lo, problem.hi)
    report = constraint_report(problem, prices, tol)
    violated = [c.name for c in report if c.slack < -tol]
    return PricingSolution(
        prices={s: float(p) for s, p in zip(problem.segments, prices)},
        objective_value=problem.objective(prices),
        constraint_report=report,
        status="fallback",
        starts_used=0,
        solve_time=time.perf_counter() - t0,
        metadata={"violated": violated, "method": "cost_plus_fallback"},
    )


class _Workspace:
    """Precomputed constraint index sets for fast fused evaluation."""

    def __init__(self, problem: PricingProblem):
        self.problem = problem
        self.ch_idx = np.where(problem.churn_cap < 1.0 - 1e-12)[0]
        self.caps = problem.churn_cap[self.ch_idx]
        self.vol_idx = np.where(problem.volume_min > 0)[0]
        self.qmin = problem.volume_min[self.vol_idx]
        self.qnorm = np.maximum(self.qmin, 1.0)
        if problem.fairness:
            self.fi = np.array([i for i, _, _ in problem.fairness])
            self.fj = np.array([j for _, j, _ in problem.fairness])
            self.fd = np.array([d for _, _, d in problem.fairness])
        else:
            self.fi = self.fj = np.zeros(0, dtype=int)
            self.fd = np.zeros(0)
        self.m = len(self.ch_idx) + len(self.vol_idx) + len(self.fd)
        self.mc, self.mv = len(self.ch_idx), len(self.vol_idx)

    def eval(self, u: np.ndarray):
        """p, q, ch, profit f, df/du, and stacked g(u)."""
        pr = self.problem
        p = np.exp(u)
        q = pr.demand_scale * np.exp(pr.beta * u)
        ch = sigmoid(pr.churn_base + pr.churn_slope * p)
        margin = p - pr.cost
        f = float((margin * q * (1.0 - ch)).sum())
        gf = q * (1.0 - ch) * (p + margin * pr.beta - margin * pr.churn_slope * ch * p)
        g = np.empty(self.m)
        g[: self.mc] = ch[self.ch_idx] - self.caps
        g[self.mc : self.mc + self.mv] = (self.qmin - q[self.vol_idx]) / self.qnorm
        g[self.mc + self.mv :] = u[self.fi] - u[self.fj] - self.fd
        return p, q, ch, f, gf, g

    def grad_penalty(self, act: np.ndarray, p, q, ch) -> np.ndarray:
        """J(u)^T act without materializing the Jacobian."""
        pr = self.problem
        grad = np.zeros(pr.n_segments)
        if self.mc:
            a = act[: self.mc]
            i = self.ch_idx
            grad[i] += a * pr.churn_slope * ch[i] * (1.0 - ch[i]) * p[i]
        if self.mv:
            a = act[self.mc : self.mc + self.mv]
            i = self.vol_idx
            grad[i] += a * (-pr.beta[i] * q[i] / self.qnorm)
        if len(self.fd):
            a = act[self.mc + self.mv :]
            np.add.at(grad, self.fi, a)
            np.add.at(grad, self.fj, -a)
        return grad


def _auglag_from(
    problem: PricingProblem,
    u0: np.ndarray,
    cfg: SolverConfig,
    f_scale: float,
    ws: _Workspace | None = None,
) -> tuple[np.ndarray, float, float, int]:
    """One augmented-Lagrangian run; returns (u, max_violation, pg_norm, iters)."""
    ws = ws or _Workspace(problem)
    lo_u, hi_u = np.log(problem.lo), np.log(problem.hi)
    m = ws.m
    lam = np.zeros(m)
    rho = 10.0
    u = np.clip(u0, lo_u, hi_u)
    total_it = 0
    pg_norm = np.inf
    prev_viol = np.inf

    def F_and_grad(u_: np.ndarray):
        p, q, ch, f, gf, g = ws.eval(u_)
        val = -f / f_scale
        grad = -gf / f_scale
        if m:
            act = np.maximum(0.0, lam + rho * g)
            val += float((act @ act) - (lam @ lam)) / (2.0 * rho)
            grad = grad + ws.grad_penalty(act, p, q, ch)
        return val, grad, g

    def F_only(u_: np.ndarray) -> float:
        p, q, ch, f, gf, g = ws.eval(u_)
        val = -f / f_scale
        if m:
            act = np.maximum(0.0, lam + rho * g)
            val += float((act @ act) - (lam @ lam)) / (2.0 * rho)
        return val

    g = np.zeros(m)
    for outer in range(cfg.max_outer_iter):
        inner_tol = cfg.grad_tol if m == 0 else max(cfg.grad_tol, 1e-3 * 0.2**outer)
        val, grad, g = F_and_grad(u)
        step = 1.0 / max(np.linalg.norm(grad), 1.0)
        best_val, stall = val, 0
        for _ in range(cfg.max_inner_iter):
            total_it += 1
            pg = u - np.clip(u - grad, lo_u, hi_u)
            pg_norm = float(np.max(np.abs(pg)))
            if pg_norm <= inner_tol:
                break
            d = np.clip(u - step * grad, lo_u, hi_u) - u
            slope = float(grad @ d)
            if slope >= 0:
                step = max(step * 0.5, 1e-12)
                continue
            t = 1.0
            val_new = F_only(u + d)
            while val_new > val + 1e-4 * t * slope and t > 1e-14:
                t *= 0.5
                val_new = F_only(u + t * d)
            u_new = u + t * d
            _, grad_new, g = F_and_grad(u_new)
            s_vec = t * d
            y_vec = grad_new - grad
            sy = float(s_vec @ y_vec)
            step = float(np.clip((s_vec @ s_vec) / sy, 1e-10, 1e10)) if sy > 1e-16 else min(step * 2.0, 1e6)
            u, val, grad = u_new, val_new, grad_new
            if val < best_val - 1e-14 * max(1.0, abs(best_val)):
                best_val, stall = val, 0
            else:
                stall += 1
                if stall >= 20:  # numerical floor for this subproblem
                    break

        if m == 0:
            return u, 0.0, pg_norm, total_it
        viol = float(np.max(np.maximum(g, 0.0), initial=0.0))
        if viol <= cfg.constraint_tol and pg_norm <= cfg.grad_tol:
            return u, viol, pg_norm, total_it
        lam = np.maximum(0.0, lam + rho * g)
        if viol > 0.25 * prev_viol:
            rho = min(rho * cfg.penalty_growth, 1e8)
        prev_viol = viol
    viol = float(np.max(np.maximum(g, 0.0), initial=0.0))
    return u, viol, pg_norm, total_it


def solve(
    problem: PricingProblem,
    cfg: SolverConfig | None = None,
    warm_start: Mapping[str, float] | None = None,
) -> PricingSolution:
    """Multi-start local solve; returns the best feasible optimum found.

    A warm start is tried first and, when it already satisfies the
    stationarity and feasibility tolerances, the random starts are skipped
    (this is what makes nightly recalibration cheap). With no feasible
    result across starts the conservative fallback is returned instead of
    failing.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    lo_u, hi_u = np.log(problem.lo), np.log(problem.hi)
    f_scale = max(1.0, abs(problem.objective(np.exp((lo_u + hi_u) / 2.0))))

    runs: list[tuple[int, np.ndarray]] = []
    if warm_start is not None:
        missing = [s for s in problem.segments if s not in warm_start]
        if missing:
            raise MissingEstimate(f"warm start missing segments {missing}")
        u_w = np.log(np.clip(
            np.array([float(warm_start[s]) for s in problem.segments]),
            problem.lo, problem.hi,
        ))
        runs.append((-1, u_w))
    for i in range(cfg.n_starts):
        rng = named_stream(cfg.seed, "start", i)
        runs.append((i, lo_u + (hi_u - lo_u) * rng.random(problem.n_segments)))

    ws = _Workspace(problem)
    best: tuple[float, int, np.ndarray, float, float] | None = None  # (obj, idx, u, viol, pg)
    total_iters = 0
    starts_used = 0
    for idx, u0 in runs:
        u, viol, pg_norm, iters = _auglag_from(problem, u0, cfg, f_scale, ws)
        total_iters += iters
        starts_used += 1
        if viol <= cfg.constraint_tol:
            obj = problem.objective(np.exp(u))
            if best is None or obj > best[0] + 1e-12:
                best = (obj, idx, u, viol, pg_norm)
        if idx == -1 and viol <= cfg.constraint_tol and pg_norm <= cfg.grad_tol:
            break  # converged warm start: skip cold starts

    if best is None:
        sol = fallback(problem, cfg.constraint_tol)
        sol.metadata["reason"] = "no feasible local optimum found"
        sol.metadata["starts_used"] = starts_used
        return sol

    obj, _, u, viol, pg_norm = best
    prices = np.exp(u)
    status = "optimal" if pg_norm <= cfg.grad_tol else "feasible_suboptimal"
    return PricingSolution(
        prices={s: float(p) for s, p in zip(problem.segments, prices)},
        objective_value=obj,
        constraint_report=constraint_report(problem, prices, cfg.constraint_tol),
        status=status,
        starts_used=starts_used,
        solve_time=time.perf_counter() - t0,
        iterations=total_iters,
        metadata={"pg_norm": pg_norm, "max_violation": viol},
    )


_GRID_DEFAULTS = {1: 4001, 2: 221, 3: 61}


def grid_oracle(
    problem: PricingProblem,
    grid_points_per_dim: int | None = None,
    constraint_tol: float = 1e-4,
) -> PricingSolution:
    """Exhaustive search over the price box; exact argmax on the grid.

    Independent of the gradient solver by construction; limited to three
    segments because the grid blows up combinatorially.
    """
    t0 = time.perf_counter()
    S = problem.n_segments
    if S > 3:
        raise TooManyDimensions(f"grid oracle supports <= 3 segments, got {S}")
    n = int(grid_points_per_dim or _GRID_DEFAULTS[S])
    axes = [np.linspace(problem.lo[k], problem.hi[k], n) for k in range(S)]
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack([m.ravel() for m in mesh], axis=1)  # (n^S, S)

    ch = sigmoid(problem.churn_base + problem.churn_slope * P)
    q = problem.demand_scale * P**problem.beta
    feasible = np.ones(len(P), dtype=bool)
    cap_active = problem.churn_cap < 1.0 - 1e-12
    if np.any(cap_active):
        feasible &= np.all(ch[:, cap_active] <= problem.churn_cap[cap_active] + constraint_tol, axis=1)
    vol = problem.volume_min > 0
    if np.any(vol):
        qmin = problem.volume_min[vol]
        feasible &= np.all((qmin - q[:, vol]) / np.maximum(qmin, 1.0) <= constraint_tol, axis=1)
    for i, j, logd in problem.fairness:
        feasible &= np.log(P[:, i]) - np.log(P[:, j]) - logd <= constraint_tol

    if not np.any(feasible):
        sol = fallback(problem, constraint_tol)
        sol.metadata["feasible_grid_points"] = 0
        sol.metadata["method"] = "grid_oracle"
        return sol

    obj = ((P - problem.cost) * q * (1.0 - ch)).sum(axis=1)
    obj[~feasible] = -np.inf
    k = int(np.argmax(obj))
    prices = P[k]
    return PricingSolution(
        prices={s: float(p) for s, p in zip(problem.segments, prices)},
        objective_value=float(obj[k]),
        constraint_report=constraint_report(problem, prices, constraint_tol),
        status="optimal",
        starts_used=0,
        solve_time=time.perf_counter() - t0,
        metadata={"method": "grid_oracle", "feasible_grid_points": int(feasible.sum()), "grid_points_per_dim": n},
    )


def solve_decomposed(
    problem: PricingProblem,
    tiers: Mapping[str, str],
    cfg: SolverConfig | None = None,
) -> PricingSolution:
    """Per-tier subproblems solved independently, then globally re-verified.

    Fairness pairs that cross tiers force a joint solve (recorded in the
    solution metadata) because the subproblems would no longer be separable.
    """
    cfg = cfg or SolverConfig()
    missing = [s for s in problem.segments if s not in tiers]
    if missing:
        raise MissingEstimate(f"tier assignment missing for segments {missing}")
    index = {s: k for k, s in enumerate(problem.segments)}
    for i, j, _ in problem.fairness:
        if tiers[problem.segments[i]] != tiers[problem.segments[j]]:
            sol = solve(problem, cfg)
            sol.metadata["decomposition"] = "joint_fallback: cross-tier fairness pair"
            return sol

    t0 = time.perf_counter()
    tier_names = sorted(set(tiers[s] for s in problem.segments))
    prices = np.empty(problem.n_segments)
    statuses: list[str] = []
    starts = iters = 0
    for tier in tier_names:
        idx = [index[s] for s in problem.segments if tiers[s] == tier]
        sub = problem.subproblem(idx)
        sol = solve(sub, cfg)
        statuses.append(sol.status)
        starts += sol.starts_used
        iters += sol.iterations
        for s, p in sol.prices.items():
            prices[index[s]] = p

    # reconciliation: re-verify the full constraint set at the merged prices
    viol = max_violation(problem, prices)
    status = "fallback" if "fallback" in statuses else (
        "feasible_suboptimal" if ("feasible_suboptimal" in statuses or viol > cfg.constraint_tol)
        else "optimal"
    )
    if status == "fallback":
        sol = fallback(problem, cfg.constraint_tol)
        sol.metadata["decomposition"] = "tier subproblem infeasible"
        return sol
    return PricingSolution(
        prices={s: float(prices[index[s]]) for s in problem.segments},
        objective_value=problem.objective(prices),
        constraint_report=constraint_report(problem, prices, cfg.constraint_tol),
        status=status,
        starts_used=starts,
        solve_time=time.perf_counter() - t0,
        iterations=iters,
        metadata={"decomposition": f"tiers={tier_names}", "reconciliation_violation": viol},
    )
