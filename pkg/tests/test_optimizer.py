import numpy as np
import pytest
from conftest import flat_churn, make_problem, random_problem, summary

from subpricer.churn import ChurnModel
from subpricer.elasticity import ElasticityEstimate
from subpricer.errors import (
    IncoherentBounds,
    MissingEstimate,
    TooManyDimensions,
)
from subpricer.optimizer import (
    GuardrailConfig,
    ReferencePoint,
    SolverConfig,
    _objective_grad_u,
    build_problem,
    fallback,
    grid_oracle,
    max_violation,
    solution_json_bytes,
    solve,
    solve_decomposed,
)


class TestBuildProblem:
    def test_single_segment(self):
        p = make_problem([-2.0], [10.0], [(11.0, 40.0)])
        assert p.n_segments == 1
        assert p.lo[0] == pytest.approx(11.0)

    def test_margin_floor_folds_into_lower_bound(self):
        p = make_problem([-2.0], [10.0], [(11.0, 40.0)], margin_min=15.0)
        assert p.lo[0] == pytest.approx(25.0)

    def test_incoherent_bounds(self):
        with pytest.raises(IncoherentBounds):
            make_problem([-2.0], [10.0], [(11.0, 20.0)], margin_min=15.0)

    def test_missing_reference(self):
        est = {"a": ElasticityEstimate("a", summary(-2.0), summary(5.0), {})}
        with pytest.raises(MissingEstimate):
            build_problem(est, flat_churn(), {"a": 10.0},
                          GuardrailConfig(price_bounds=(10.0, 40.0)), reference={})


class TestClosedForm:
    def test_isoelastic_optimum(self):
        # Q = A p^-2, c = 10: first-order condition gives p* = beta*c/(beta+1) = 20
        problem = make_problem([-2.0], [10.0], [(11.0, 40.0)])
        sol = solve(problem, SolverConfig(n_starts=4, seed=1))
        assert sol.status == "optimal"
        assert sol.prices["s0"] == pytest.approx(20.0, abs=0.1)
        oracle = grid_oracle(problem)
        assert sol.objective_value >= oracle.objective_value * (1 - 1e-3)

    def test_margin_floor_binds_at_25(self):
        problem = make_problem([-2.0], [10.0], [(11.0, 40.0)], margin_min=15.0)
        sol = solve(problem, SolverConfig(n_starts=4, seed=1))
        assert sol.prices["s0"] == pytest.approx(25.0, abs=0.05)
        margin = [c for c in sol.constraint_report if c.name == "margin_min[s0]"][0]
        assert margin.binding
        assert margin.slack == pytest.approx(0.0, abs=1e-4 * 25)

    def test_symmetric_fairness_equalizes(self):
        problem = make_problem(
            [-2.0, -2.0], [10.0, 10.0], [(11.0, 40.0), (11.0, 40.0)],
            fairness=[("s0", "s1", 1.0), ("s1", "s0", 1.0)],
        )
        sol = solve(problem, SolverConfig(n_starts=4, seed=2))
        assert sol.prices["s0"] == pytest.approx(sol.prices["s1"], rel=1e-3)


class TestChurnCap:
    def test_cap_binds_when_unconstrained_churn_exceeds_it(self):
        churn = flat_churn(theta0=-4.0, theta1=0.12)
        problem = make_problem([-1.2], [10.0], [(12.0, 60.0)], churn=churn, churn_max=0.08)
        sol = solve(problem, SolverConfig(n_starts=6, seed=3))
        # unconstrained optimum would push churn above the cap
        unc = solve(make_problem([-1.2], [10.0], [(12.0, 60.0)], churn=churn),
                    SolverConfig(n_starts=6, seed=3))
        churn_unc = problem.churn(unc.price_vector(problem.segments))[0]
        assert churn_unc > 0.08
        ch = problem.churn(sol.price_vector(problem.segments))[0]
        assert ch <= 0.08 + 1e-4
        cap = [c for c in sol.constraint_report if c.name == "churn_max[s0]"][0]
        assert cap.binding


class TestOracleEquivalence:
    def test_forty_random_problems(self):
        for seed in range(40):
            problem = random_problem(seed)
            sol = solve(problem, SolverConfig(n_starts=6, seed=seed))
            oracle = grid_oracle(problem)
            assert sol.status != "fallback", f"seed {seed} infeasible"
            prices = sol.price_vector(problem.segments)
            assert max_violation(problem, prices) <= 1e-4, f"seed {seed}"
            assert sol.objective_value >= oracle.objective_value * (1 - 0.005), (
                f"seed {seed}: solve {sol.objective_value} vs oracle {oracle.objective_value}"
            )

    def test_grid_resolution_default(self):
        problem = make_problem([-2.0], [10.0], [(10.0, 40.0)])
        oracle = grid_oracle(problem, grid_points_per_dim=10001)
        assert oracle.prices["s0"] == pytest.approx(20.0, abs=40.0 / 10000 + 1e-9)

    def test_infeasible_reports_empty(self):
        churn = flat_churn(theta0=-2.0, theta1=0.05)  # churn > 11% everywhere
        problem = make_problem([-2.0], [10.0], [(11.0, 40.0)], churn=churn, churn_max=0.001)
        oracle = grid_oracle(problem)
        assert oracle.status == "fallback"
        assert oracle.metadata["feasible_grid_points"] == 0

    def test_too_many_dimensions(self):
        problem = make_problem([-2.0] * 4, [10.0] * 4, [(11.0, 40.0)] * 4)
        with pytest.raises(TooManyDimensions):
            grid_oracle(problem)


class TestMultiStart:
    def test_objective_monotone_in_starts(self):
        problem = random_problem(7)
        objs = []
        for n in (1, 3, 6, 10):
            sol = solve(problem, SolverConfig(n_starts=n, seed=11))
            objs.append(sol.objective_value)
        assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))

    def test_deterministic(self):
        problem = random_problem(9)
        a = solve(problem, SolverConfig(n_starts=5, seed=13))
        b = solve(problem, SolverConfig(n_starts=5, seed=13))
        assert solution_json_bytes(a) == solution_json_bytes(b)

    def test_warm_start_dominance(self):
        problem = random_problem(3)
        cold = solve(problem, SolverConfig(n_starts=10, seed=5))
        warm = solve(problem, SolverConfig(n_starts=10, seed=5), warm_start=cold.prices)
        assert warm.objective_value >= cold.objective_value * (1 - 1e-6)
        assert warm.iterations <= 0.10 * cold.iterations


class TestFallback:
    def test_max_rule(self):
        problem = make_problem([-2.0], [10.0], [(12.0, 40.0)], margin_min=5.0)
        sol = fallback(problem)
        assert sol.prices["s0"] == pytest.approx(15.0)
        assert sol.status == "fallback"

    def test_clips_to_upper_bound_and_flags(self):
        # a coherent problem cannot carry c + m > p_hi (build rejects it), so
        # exercise the clip rule on a directly-constructed degenerate instance
        import dataclasses

        base = make_problem([-2.0], [10.0], [(12.0, 14.0)], margin_min=3.5)
        problem = dataclasses.replace(base, margin_min=5.0)
        sol = fallback(problem)
        assert sol.prices["s0"] == pytest.approx(14.0)
        assert "margin_min[s0]" in sol.metadata["violated"]

    def test_all_slack_reports_clean(self):
        problem = make_problem([-2.0], [10.0], [(12.0, 40.0)], margin_min=1.0)
        sol = fallback(problem)
        assert sol.metadata["violated"] == []

    def test_solver_falls_back_on_infeasible(self):
        churn = flat_churn(theta0=-2.0, theta1=0.05)
        problem = make_problem([-2.0], [10.0], [(11.0, 40.0)], churn=churn, churn_max=0.001)
        sol = solve(problem, SolverConfig(n_starts=3, seed=1))
        assert sol.status == "fallback"
        assert any(c.slack < 0 for c in sol.constraint_report)


class TestGradient:
    def test_matches_central_differences(self):
        for seed in range(8):
            problem = random_problem(seed + 100)
            rng = np.random.default_rng(seed)
            lo_u, hi_u = np.log(problem.lo), np.log(problem.hi)
            u = lo_u + (hi_u - lo_u) * rng.uniform(0.2, 0.8, problem.n_segments)
            _, grad = _objective_grad_u(problem, u)
            h = 1e-6
            for k in range(problem.n_segments):
                e = np.zeros_like(u)
                e[k] = h
                fp = problem.objective(np.exp(u + e))
                fm = problem.objective(np.exp(u - e))
                fd = (fp - fm) / (2 * h)
                assert grad[k] == pytest.approx(fd, rel=1e-6, abs=1e-8 * max(1, abs(fd)))


class TestDecomposed:
    def test_two_tiers_match_joint(self):
        problem = make_problem(
            [-2.0, -1.5, -2.5, -1.2],
            [10.0, 8.0, 12.0, 6.0],
            [(11.0, 40.0), (9.0, 32.0), (13.0, 48.0), (7.0, 24.0)],
            fairness=[("s0", "s1", 1.8), ("s2", "s3", 2.5)],
        )
        tiers = {"s0": "basic", "s1": "basic", "s2": "pro", "s3": "pro"}
        joint = solve(problem, SolverConfig(n_starts=6, seed=21))
        deco = solve_decomposed(problem, tiers, SolverConfig(n_starts=6, seed=21))
        assert deco.objective_value >= joint.objective_value * (1 - 0.005)
        assert "tiers=" in deco.metadata["decomposition"]

    def test_cross_tier_pair_forces_joint(self):
        problem = make_problem(
            [-2.0, -1.5], [10.0, 8.0], [(11.0, 40.0), (9.0, 32.0)],
            fairness=[("s0", "s1", 1.5)],
        )
        tiers = {"s0": "basic", "s1": "pro"}
        sol = solve_decomposed(problem, tiers, SolverConfig(n_starts=4, seed=2))
        assert "joint_fallback" in sol.metadata["decomposition"]

    def test_single_tier_equals_solve(self):
        problem = random_problem(15)
        tiers = {s: "all" for s in problem.segments}
        a = solve(problem, SolverConfig(n_starts=4, seed=3))
        b = solve_decomposed(problem, tiers, SolverConfig(n_starts=4, seed=3))
        assert b.objective_value == pytest.approx(a.objective_value, rel=1e-9)
