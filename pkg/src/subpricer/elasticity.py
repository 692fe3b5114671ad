"""Hierarchical Bayesian log-log elasticity estimation via Gibbs sampling.

Per segment s the model is log Q = alpha_s + beta_s * log P + gamma_s . Z
with the price coefficients pooled through beta_s ~ N(mu_beta, sigma2_beta).
All conditionals are conjugate (normal coefficients, inverse-gamma
variances), which keeps the sampler exact and gives a closed-form shrinkage
oracle to validate it against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CollinearPrices,
    DegenerateDesign,
    NonPositiveData,
    UnknownSegment,
    ValidationError,
)
from .panel import SubscriptionPanel, aggregate_segment
from .seeding import named_stream


@dataclass(frozen=True)
class ElasticityPriors:
    mu_beta_mean: float = -1.0
    mu_beta_sd: float = 5.0
    sigma_beta_shape: float = 2.0
    sigma_beta_scale: float = 0.5
    noise_shape: float = 2.0
    noise_scale: float = 0.5
    alpha_sd: float = 100.0
    gamma_sd: float = 10.0

    def __post_init__(self) -> None:
        for name in ("mu_beta_sd", "sigma_beta_shape", "sigma_beta_scale",
                     "noise_shape", "noise_scale", "alpha_sd", "gamma_sd"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")

    @staticmethod
    def pinned(
        mu_beta: float,
        sigma2_beta: float,
        noise_var: float,
        alpha_sd: float = 100.0,
        gamma_sd: float = 10.0,
    ) -> "ElasticityPriors":
        """Degenerate hyperpriors that pin the population parameters.

        Used to compare the sampler against the closed-form shrinkage oracle
        at fixed (mu_beta, sigma2_beta, noise variance).
        """
        shape = 1e8
        return ElasticityPriors(
            mu_beta_mean=mu_beta,
            mu_beta_sd=1e-6,
            sigma_beta_shape=shape,
            sigma_beta_scale=(shape + 1.0) * sigma2_beta,
            noise_shape=shape,
            noise_scale=(shape + 1.0) * noise_var,
            alpha_sd=alpha_sd,
            gamma_sd=gamma_sd,
        )


def _inv_gamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    return float(scale / rng.gamma(shape, 1.0))


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    sd: float
    lo: float
    hi: float

    def to_json(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ElasticityEstimate:
    segment: str
    beta: ParamSummary
    alpha: ParamSummary
    gamma: dict[str, ParamSummary]


@dataclass(frozen=True)
class ElasticityPosterior:
    """Post-warmup draws for every segment plus population hyperparameters."""

    segments: tuple[str, ...]
    covariate_names: tuple[str, ...]
    alpha_draws: np.ndarray    # (chains, iters, S)
    beta_draws: np.ndarray     # (chains, iters, S)
    gamma_draws: np.ndarray    # (chains, iters, S, k)
    mu_beta_draws: np.ndarray  # (chains, iters)
    sigma2_beta_draws: np.ndarray
    noise_var_draws: np.ndarray
    n_draws: int
    n_burnin: int
    rhat: dict[str, float]

    def __post_init__(self) -> None:
        if not self.n_draws > self.n_burnin >= 0:
            raise ValidationError("need n_draws > n_burnin >= 0")

    def segment_index(self, segment: str) -> int:
        try:
            return self.segments.index(segment)
        except ValueError:
            raise UnknownSegment(f"segment {segment!r} not in posterior") from None

    def kept(self, draws: np.ndarray) -> np.ndarray:
        """Post-burn-in draws pooled across chains."""
        kept = draws[:, self.n_burnin :]
        return kept.reshape(-1, *draws.shape[2:])


def _summary(draws: np.ndarray) -> ParamSummary:
    lo, hi = np.percentile(draws, [2.5, 97.5])
    return ParamSummary(
        mean=float(np.mean(draws)), sd=float(np.std(draws, ddof=1)),
        lo=float(lo), hi=float(hi),
    )


def posterior_summary(post: ElasticityPosterior, segment: str) -> ElasticityEstimate:
    """Mean, sd, and central 95% interval from post-burn-in draws."""
    i = post.segment_index(segment)
    gammas = {
        name: _summary(post.kept(post.gamma_draws)[:, i, k])
        for k, name in enumerate(post.covariate_names)
    }
    return ElasticityEstimate(
        segment=segment,
        beta=_summary(post.kept(post.beta_draws)[:, i]),
        alpha=_summary(post.kept(post.alpha_draws)[:, i]),
        gamma=gammas,
    )


def summarize_all(post: ElasticityPosterior) -> dict[str, ElasticityEstimate]:
    return {s: posterior_summary(post, s) for s in post.segments}


def estimate_to_json(est: ElasticityEstimate, rhat_beta: float | None = None) -> dict:
    return {
        "segment": est.segment,
        "beta": est.beta.to_json(),
        "alpha": est.alpha.to_json(),
        "gamma": {k: v.to_json() for k, v in est.gamma.items()},
        "diagnostics": {"rhat_beta": rhat_beta},
    }


def _split_rhat(chains: np.ndarray) -> float:
    """Potential scale reduction on split chains; chains is (n_chains, iters)."""
    half = chains.shape[1] // 2
    if half < 2:
        return float("nan")
    pieces = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    m, n = pieces.shape
    means = pieces.mean(axis=1)
    w = float(np.mean(pieces.var(axis=1, ddof=1)))
    b_over_n = float(np.var(means, ddof=1))
    if w <= 1e-300:
        return 1.0
    var_plus = (n - 1) / n * w + b_over_n
    return float(np.sqrt(var_plus / w))


def _segment_design(panel: SubscriptionPanel, segment: str, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    s = aggregate_segment(panel, segment)
    if np.any(s.prices <= 0) or np.any(s.quantities <= 0):
        raise NonPositiveData(f"segment {segment}: log needs positive prices/quantities")
    X = np.column_stack([np.ones(len(s)), np.log(s.prices)] + [s.covariates[n] for n in names])
    return X, np.log(s.quantities)


def fit_hierarchical(
    panel: SubscriptionPanel,
    priors: ElasticityPriors,
    n_draws: int = 4000,
    n_burnin: int = 1000,
    seed: int = 0,
    n_chains: int = 2,
) -> ElasticityPosterior:
    """Gibbs sampler for the pooled log-log model. Deterministic given seed.

    Segments with little own price variation are rescued by pooling; the fit
    only fails (DegenerateDesign) when no segment carries price variation.
    """
    segments = panel.segments
    names = panel.feature_names("numeric")
    k = len(names)
    designs = [_segment_design(panel, s, names) for s in segments]
    if max(float(np.var(X[:, 1])) for X, _ in designs) < 1e-12:
        raise DegenerateDesign("no price variation in any segment; beta unidentifiable")

    S = len(segments)
    d = 2 + k
    xtx = np.stack([X.T @ X for X, _ in designs])
    xty = np.stack([X.T @ y for X, y in designs])
    yty = np.array([y @ y for _, y in designs])
    n_obs = np.array([len(y) for _, y in designs])
    n_total = int(n_obs.sum())

    prior_prec = np.zeros(d)
    prior_prec[0] = 1.0 / priors.alpha_sd**2
    prior_prec[1] = 0.0  # depends on sigma2_beta, set per iteration
    prior_prec[2:] = 1.0 / priors.gamma_sd**2

    shape_a = np.empty((n_chains, n_draws, S))
    shape_b = np.empty((n_chains, n_draws, S))
    shape_g = np.empty((n_chains, n_draws, S, k))
    shape_mu = np.empty((n_chains, n_draws))
    shape_s2b = np.empty((n_chains, n_draws))
    shape_nv = np.empty((n_chains, n_draws))

    for c in range(n_chains):
        rng = named_stream(seed, "chain", c)
        mu_beta = priors.mu_beta_mean
        sigma2_beta = priors.sigma_beta_scale / (priors.sigma_beta_shape + 1.0)
        noise_var = priors.noise_scale / (priors.noise_shape + 1.0)
        coefs = np.zeros((S, d))
        coefs[:, 1] = mu_beta

        for it in range(n_draws):
            prec_diag = prior_prec.copy()
            prec_diag[1] = 1.0 / sigma2_beta
            m0 = np.zeros(d)
            m0[1] = mu_beta
            sse = 0.0
            for s_i in range(S):
                lam = xtx[s_i] / noise_var + np.diag(prec_diag)
                rhs = xty[s_i] / noise_var + prec_diag * m0
                chol = np.linalg.cholesky(lam)
                mean = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
                z = rng.standard_normal(d)
                coefs[s_i] = mean + np.linalg.solve(chol.T, z)
                sse += (
                    yty[s_i]
                    - 2.0 * coefs[s_i] @ xty[s_i]
                    + coefs[s_i] @ xtx[s_i] @ coefs[s_i]
                )

            betas = coefs[:, 1]
            prec_mu = S / sigma2_beta + 1.0 / priors.mu_beta_sd**2
            mean_mu = (betas.sum() / sigma2_beta + priors.mu_beta_mean / priors.mu_beta_sd**2) / prec_mu
            mu_beta = mean_mu + rng.standard_normal() / np.sqrt(prec_mu)

            sigma2_beta = _inv_gamma(
                rng,
                priors.sigma_beta_shape + S / 2.0,
                priors.sigma_beta_scale + 0.5 * float(np.sum((betas - mu_beta) ** 2)),
            )
            noise_var = _inv_gamma(
                rng, priors.noise_shape + n_total / 2.0, priors.noise_scale + 0.5 * sse
            )

            shape_a[c, it] = coefs[:, 0]
            shape_b[c, it] = coefs[:, 1]
            shape_g[c, it] = coefs[:, 2:]
            shape_mu[c, it] = mu_beta
            shape_s2b[c, it] = sigma2_beta
            shape_nv[c, it] = noise_var

    kept = slice(n_burnin, None)
    rhat: dict[str, float] = {"mu_beta": _split_rhat(shape_mu[:, kept])}
    for s_i, seg in enumerate(segments):
        rhat[f"beta[{seg}]"] = _split_rhat(shape_b[:, kept, s_i])

    return ElasticityPosterior(
        segments=segments,
        covariate_names=names,
        alpha_draws=shape_a,
        beta_draws=shape_b,
        gamma_draws=shape_g,
        mu_beta_draws=shape_mu,
        sigma2_beta_draws=shape_s2b,
        noise_var_draws=shape_nv,
        n_draws=n_draws,
        n_burnin=n_burnin,
        rhat=rhat,
    )


def shrinkage_oracle(
    beta_hat: np.ndarray,
    n_s: np.ndarray,
    sigma2: float,
    mu: float,
    sigma2_beta: float,
) -> np.ndarray:
    """Closed-form normal-normal posterior mean at fixed hyperparameters.

    ``n_s`` is the effective sample size carried by each segment's estimate:
    the observation count for a mean model, or sum(x^2) for a regression
    slope where x is the (residualized) price regressor.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    n_s = np.asarray(n_s, dtype=float)
    if sigma2 <= 0 or sigma2_beta <= 0:
        raise ValidationError("variances must be positive")
    prec_data = n_s / sigma2
    prec_prior = 1.0 / sigma2_beta
    return (prec_data * beta_hat + prec_prior * mu) / (prec_data + prec_prior)


# ---------------------------------------------------------------------------
# Cross-price elasticities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ElasticityMatrix:
    products: tuple[str, ...]
    e: np.ndarray  # e[i, j] = d log Q_i / d log p_j
    flagged_nonnegative_diagonal: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "products": list(self.products),
            "e": [[float(v) for v in row] for row in self.e],
            "flagged_nonnegative_diagonal": list(self.flagged_nonnegative_diagonal),
        }


def cross_elasticity_matrix(
    panel: SubscriptionPanel,
    priors: ElasticityPriors,
    seed: int = 0,
    n_draws: int = 2000,
    n_burnin: int = 500,
) -> ElasticityMatrix:
    """Per-product regressions on every product's log price over shared periods.

    Row i comes from a conjugate Bayesian regression of log Q_i on all log
    prices; e_ij is the posterior mean of the log p_j coefficient.
    """
    products = panel.segments
    m = len(products)
    if m < 2:
        raise ValidationError("need >= 2 products for cross-elasticities")
    series = {p: aggregate_segment(panel, p) for p in products}
    common = set(series[products[0]].periods.tolist())
    for p in products[1:]:
        common &= set(series[p].periods.tolist())
    common_sorted = np.array(sorted(common))
    if len(common_sorted) < m + 3:
        raise ValidationError("not enough overlapping periods across products")

    log_p = np.empty((len(common_sorted), m))
    log_q = np.empty((len(common_sorted), m))
    for j, p in enumerate(products):
        s = series[p]
        if np.any(s.prices <= 0) or np.any(s.quantities <= 0):
            raise NonPositiveData(f"product {p}: log needs positive data")
        keep = np.isin(s.periods, common_sorted)
        log_p[:, j] = np.log(s.prices[keep])
        log_q[:, j] = np.log(s.quantities[keep])

    corr = np.corrcoef(log_p.T)
    off = corr[~np.eye(m, dtype=bool)]
    if np.any(np.abs(off) > 0.99):
        raise CollinearPrices(f"max cross-product price correlation {np.abs(off).max():.4f}")

    X = np.column_stack([np.ones(len(common_sorted)), log_p])
    prior_prec = np.concatenate([[1.0 / priors.alpha_sd**2], np.full(m, 1.0 / priors.gamma_sd**2)])
    xtx, n = X.T @ X, len(common_sorted)

    e = np.empty((m, m))
    for i in range(m):
        rng = named_stream(seed, "cross", products[i])
        y = log_q[:, i]
        xty = X.T @ y
        noise_var = priors.noise_scale / (priors.noise_shape + 1.0)
        coefs = np.zeros(m + 1)
        draws = np.empty((n_draws, m))
        for it in range(n_draws):
            lam = xtx / noise_var + np.diag(prior_prec)
            chol = np.linalg.cholesky(lam)
            mean = np.linalg.solve(chol.T, np.linalg.solve(chol, xty / noise_var))
            coefs = mean + np.linalg.solve(chol.T, rng.standard_normal(m + 1))
            resid = y - X @ coefs
            noise_var = _inv_gamma(
                rng, priors.noise_shape + n / 2.0, priors.noise_scale + 0.5 * float(resid @ resid)
            )
            draws[it] = coefs[1:]
        e[i] = draws[n_burnin:].mean(axis=0)

    flagged = tuple(products[i] for i in range(m) if e[i, i] >= 0)
    return ElasticityMatrix(products=products, e=e, flagged_nonnegative_diagonal=flagged)
