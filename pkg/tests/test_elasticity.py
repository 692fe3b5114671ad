import numpy as np
import pytest

from subpricer.elasticity import (
    ElasticityPriors,
    cross_elasticity_matrix,
    fit_hierarchical,
    posterior_summary,
    shrinkage_oracle,
)
from subpricer.errors import (
    CollinearPrices,
    DegenerateDesign,
    NonPositiveData,
    UnknownSegment,
)
from subpricer.panel import FeatureSpec, NUMERIC, SubscriptionRecord, build_panel
from subpricer.seeding import named_stream
from subpricer.synthgen import generate_cross_panel


def panel_from_arrays(data):
    """data: dict segment -> (prices, quantities)."""
    records = []
    for seg, (p, q) in data.items():
        for t, (pi, qi) in enumerate(zip(p, q), start=1):
            records.append(SubscriptionRecord.make(seg, t, float(pi), float(qi), {}))
    return build_panel(records, ())


class TestShrinkageOracle:
    def test_hand_computed(self):
        out = shrinkage_oracle(np.array([-2.0]), np.array([4.0]), 1.0, -1.0, 1.0)
        assert out[0] == pytest.approx(-1.8)

    def test_large_n_converges_to_estimate(self):
        out = shrinkage_oracle(np.array([-2.0]), np.array([1e12]), 1.0, -1.0, 1.0)
        assert out[0] == pytest.approx(-2.0, abs=1e-9)

    def test_zero_n_returns_prior_mean(self):
        out = shrinkage_oracle(np.array([-2.0]), np.array([0.0]), 1.0, -1.0, 1.0)
        assert out[0] == pytest.approx(-1.0)

    def test_shrinkage_ordering(self):
        # smaller effective n pulls strictly closer to mu
        beta_hat = np.array([-2.5, -2.5, -2.5])
        n_s = np.array([2.0, 10.0, 100.0])
        out = shrinkage_oracle(beta_hat, n_s, 0.5, -1.0, 0.8)
        dist = np.abs(out - (-1.0))
        assert dist[0] < dist[1] < dist[2]
        assert np.all(np.abs(out - (-1.0)) < abs(-2.5 - (-1.0)))


def noise_free_panel(beta=-1.5, n=40, seed=1):
    rng = named_stream(seed, "nf")
    logp = np.log(30.0) + rng.normal(0, 0.25, n)
    logq = 8.0 + beta * logp
    return panel_from_arrays({"a": (np.exp(logp), np.exp(logq))})


class TestFitHierarchical:
    def test_noise_free_recovery(self):
        panel = noise_free_panel()
        priors = ElasticityPriors()
        post = fit_hierarchical(panel, priors, n_draws=1500, n_burnin=400, seed=3)
        est = posterior_summary(post, "a")
        assert est.beta.mean == pytest.approx(-1.5, abs=0.02)

    def test_tiny_sigma_beta_prior_collapses_to_pooled_mean(self):
        rng = named_stream(4, "pool")
        data = {}
        true = {"a": -2.0, "b": -1.0}
        for seg, b in true.items():
            logp = np.log(30) + rng.normal(0, 0.3, 60)
            logq = 8.0 + b * logp + rng.normal(0, 0.05, 60)
            data[seg] = (np.exp(logp), np.exp(logq))
        panel = panel_from_arrays(data)
        priors = ElasticityPriors(sigma_beta_shape=1e8, sigma_beta_scale=1e8 * 1e-10)
        post = fit_hierarchical(panel, priors, n_draws=1200, n_burnin=300, seed=5)
        ests = [posterior_summary(post, s).beta.mean for s in ("a", "b")]
        assert abs(ests[0] - ests[1]) < 0.01  # both collapse to a common beta

    def test_two_identical_segments_exchangeable(self):
        rng = named_stream(6, "sym")
        logp = np.log(25) + rng.normal(0, 0.3, 80)
        logq = 7.0 - 1.2 * logp + rng.normal(0, 0.05, 80)
        p, q = np.exp(logp), np.exp(logq)
        panel = panel_from_arrays({"a": (p, q), "b": (p, q)})
        post = fit_hierarchical(panel, ElasticityPriors(), n_draws=1500, n_burnin=400, seed=7)
        ea, eb = (posterior_summary(post, s).beta for s in ("a", "b"))
        mc_err = 3 * max(ea.sd, eb.sd) / np.sqrt(post.n_draws - post.n_burnin)
        assert abs(ea.mean - eb.mean) < max(5 * mc_err, 0.01)

    def test_determinism(self):
        panel = noise_free_panel(seed=9)
        post1 = fit_hierarchical(panel, ElasticityPriors(), 400, 100, seed=11)
        post2 = fit_hierarchical(panel, ElasticityPriors(), 400, 100, seed=11)
        assert np.array_equal(post1.beta_draws, post2.beta_draws)
        assert np.array_equal(post1.noise_var_draws, post2.noise_var_draws)

    def test_non_positive_data(self):
        records = [
            SubscriptionRecord.make("a", t, 10.0, 0.0, {}) for t in range(1, 6)
        ]
        panel = build_panel(records, ())
        with pytest.raises(NonPositiveData):
            fit_hierarchical(panel, ElasticityPriors(), 100, 10, seed=1)

    def test_degenerate_design(self):
        p = np.full(10, 30.0)
        q = np.full(10, 100.0)
        panel = panel_from_arrays({"a": (p, q), "b": (p, q)})
        with pytest.raises(DegenerateDesign):
            fit_hierarchical(panel, ElasticityPriors(), 100, 10, seed=1)

    def test_unknown_segment_summary(self):
        panel = noise_free_panel()
        post = fit_hierarchical(panel, ElasticityPriors(), 200, 50, seed=1)
        with pytest.raises(UnknownSegment):
            posterior_summary(post, "nope")

    def test_burnin_excluded(self):
        panel = noise_free_panel()
        post = fit_hierarchical(panel, ElasticityPriors(), 300, 250, seed=2)
        kept = post.kept(post.beta_draws)
        assert kept.shape[0] == (300 - 250) * 2  # two chains pooled


class TestGibbsVsOracle:
    def test_pinned_hyperparameters_match_oracle(self):
        # alpha pinned at zero, hyperparameters pinned: per-segment posterior
        # means must match the closed-form normal-normal shrinkage
        rng = named_stream(21, "oracle")
        mu0, s2b, nvar = -1.4, 0.09, 0.04
        data, beta_hat, eff_n = {}, [], []
        for i, n in enumerate([6, 12, 40]):
            x = np.log(30) + rng.normal(0, 0.3, n)
            beta_true = mu0 + rng.normal(0, np.sqrt(s2b))
            y = beta_true * x + rng.normal(0, np.sqrt(nvar), n)
            data[f"s{i}"] = (np.exp(x), np.exp(y))
            beta_hat.append(float(x @ y / (x @ x)))
            eff_n.append(float(x @ x))
        panel = panel_from_arrays(data)
        priors = ElasticityPriors.pinned(mu_beta=mu0, sigma2_beta=s2b, noise_var=nvar,
                                         alpha_sd=1e-6)
        post = fit_hierarchical(panel, priors, n_draws=3000, n_burnin=500, seed=13)
        oracle = shrinkage_oracle(np.array(beta_hat), np.array(eff_n), nvar, mu0, s2b)
        for i, seg in enumerate(("s0", "s1", "s2")):
            kept = post.kept(post.beta_draws)[:, i]
            mc_se = np.std(kept, ddof=1) / np.sqrt(len(kept))
            assert abs(kept.mean() - oracle[i]) < 3 * mc_se + 1e-4

    def test_small_segments_shrink_relatively_more(self):
        rng = named_stream(22, "shrinkmore")
        mu0, s2b, nvar = -1.0, 0.25, 1.0
        data, beta_hat = {}, {}
        for i, n in enumerate([4, 150]):
            x = np.log(30) + rng.normal(0, 0.3, n)
            y = -2.0 * x + rng.normal(0, np.sqrt(nvar), n)  # far from mu0
            seg = f"s{i}"
            data[seg] = (np.exp(x), np.exp(y))
            beta_hat[seg] = float(x @ y / (x @ x))
        panel = panel_from_arrays(data)
        priors = ElasticityPriors.pinned(mu_beta=mu0, sigma2_beta=s2b, noise_var=nvar,
                                         alpha_sd=1e-6)
        post = fit_hierarchical(panel, priors, 2000, 400, seed=3)
        pulls = {}
        for seg in ("s0", "s1"):
            mean = posterior_summary(post, seg).beta.mean
            # posterior mean sits strictly between the OLS estimate and mu
            assert abs(mean - mu0) < abs(beta_hat[seg] - mu0)
            pulls[seg] = abs(mean - beta_hat[seg]) / abs(beta_hat[seg] - mu0)
        assert pulls["s0"] > pulls["s1"]


class TestCrossElasticity:
    def test_independent_products_near_zero_off_diagonal(self):
        e_true = np.array([[-1.5, 0.0], [0.0, -1.2]])
        panel = generate_cross_panel(e_true, n_periods=150, seed=31)
        mat = cross_elasticity_matrix(panel, ElasticityPriors(), seed=1)
        assert abs(mat.e[0, 1]) < 0.1
        assert abs(mat.e[1, 0]) < 0.1
        assert mat.e[0, 0] == pytest.approx(-1.5, abs=0.15)

    def test_substitute_pair_recovered(self):
        e_true = np.array([[-1.5, 0.5], [0.4, -1.2]])
        panel = generate_cross_panel(e_true, n_periods=150, seed=33)
        mat = cross_elasticity_matrix(panel, ElasticityPriors(), seed=2)
        assert mat.e[0, 1] == pytest.approx(0.5, abs=0.15)
        assert mat.e[1, 0] == pytest.approx(0.4, abs=0.15)

    def test_collinear_prices_rejected(self):
        e_true = np.array([[-1.5, 0.0], [0.0, -1.2]])
        panel = generate_cross_panel(e_true, n_periods=100, seed=35, correlate_prices=0.999)
        with pytest.raises(CollinearPrices):
            cross_elasticity_matrix(panel, ElasticityPriors(), seed=3)


class TestCoverage:
    def test_interval_coverage_over_replications(self):
        # 95% intervals for beta_s contain the truth 95% +- 5pts of the time
        hits = total = 0
        for rep in range(50):
            rng = named_stream(rep, "cover")
            data, truths = {}, []
            for i in range(4):
                n = 50
                beta = -1.5 + rng.normal(0, 0.3)
                x = np.log(30) + rng.normal(0, 0.25, n)
                y = 8.0 + beta * x + rng.normal(0, 0.05, n)
                data[f"s{i}"] = (np.exp(x), np.exp(y))
                truths.append(beta)
            panel = panel_from_arrays(data)
            post = fit_hierarchical(panel, ElasticityPriors(), 800, 200, seed=rep, n_chains=1)
            for i, seg in enumerate(sorted(data)):
                est = posterior_summary(post, seg)
                hits += int(est.beta.lo <= truths[i] <= est.beta.hi)
                total += 1
        assert 0.90 <= hits / total <= 1.0
