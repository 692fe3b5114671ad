"""Lagged, L1-regularized logistic churn model.

The churn score is linear in current price, prior-period price, behavioral
features, and tenure; the fit maximizes the penalized log-likelihood
sum(y*log s + (1-y)*log(1-s)) - lambda * sum|theta_j| with the intercept
left unpenalized, via accelerated proximal gradient with backtracking.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import SchemaMismatch, SeparableDataWarning, SingleClass, WindowTooLong
from .panel import NUMERIC, SubscriptionPanel


def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    """Numerically stable logistic function (safe for |z| up to ~700)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class ChurnModel:
    """Coefficients of the lagged logistic churn function."""

    theta0: float
    theta1: float            # current price
    theta2: float            # previous-period price
    theta3: np.ndarray       # behavioral features, aligned with feature_names
    theta4: float            # tenure
    l1_lambda: float
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.theta3) != len(self.feature_names):
            raise SchemaMismatch("theta3 length must match feature_names")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChurnModel):
            return NotImplemented
        return (
            (self.theta0, self.theta1, self.theta2, self.theta4) ==
            (other.theta0, other.theta1, other.theta2, other.theta4)
            and np.array_equal(self.theta3, other.theta3)
            and self.l1_lambda == other.l1_lambda
            and self.feature_names == other.feature_names
        )

    def logit(
        self,
        price: float | np.ndarray,
        prev_price: float | np.ndarray,
        features: Mapping[str, float] | np.ndarray,
        tenure: float | np.ndarray,
    ) -> float | np.ndarray:
        x = self._feature_vector(features)
        return (
            self.theta0
            + self.theta1 * np.asarray(price, dtype=float)
            + self.theta2 * np.asarray(prev_price, dtype=float)
            + x @ self.theta3
            + self.theta4 * np.asarray(tenure, dtype=float)
        )

    def _feature_vector(self, features: Mapping[str, float] | np.ndarray) -> np.ndarray:
        if isinstance(features, Mapping):
            missing = [n for n in self.feature_names if n not in features]
            extra = [n for n in features if n not in self.feature_names]
            if missing or extra:
                raise SchemaMismatch(f"churn features: missing {missing}, unexpected {extra}")
            return np.array([features[n] for n in self.feature_names], dtype=float)
        x = np.asarray(features, dtype=float)
        if x.shape[-1] != len(self.feature_names):
            raise SchemaMismatch(
                f"expected {len(self.feature_names)} features, got {x.shape[-1]}"
            )
        return x

    def to_json(self) -> dict:
        return {
            "theta0": self.theta0,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "theta3": {n: float(v) for n, v in zip(self.feature_names, self.theta3)},
            "theta4": self.theta4,
            "lambda": self.l1_lambda,
        }

    @staticmethod
    def from_json(payload: dict | str) -> "ChurnModel":
        if isinstance(payload, str):
            payload = json.loads(payload)
        names = tuple(payload["theta3"])
        return ChurnModel(
            theta0=float(payload["theta0"]),
            theta1=float(payload["theta1"]),
            theta2=float(payload["theta2"]),
            theta3=np.array([payload["theta3"][n] for n in names], dtype=float),
            theta4=float(payload["theta4"]),
            l1_lambda=float(payload.get("lambda", 0.0)),
            feature_names=names,
        )


def predict_churn(
    model: ChurnModel,
    price: float | np.ndarray,
    prev_price: float | np.ndarray,
    features: Mapping[str, float] | np.ndarray,
    tenure: float | np.ndarray,
) -> float | np.ndarray:
    """Churn probability sigma(z) for the lagged logistic score."""
    z = model.logit(price, prev_price, features, tenure)
    out = sigmoid(z)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ChurnDataset:
    prices: np.ndarray
    prev_prices: np.ndarray
    features: np.ndarray  # (n, k)
    tenures: np.ndarray
    labels: np.ndarray    # {0, 1}
    feature_names: tuple[str, ...]
    window: int

    def __post_init__(self) -> None:
        if self.window <= 0:
            raise ValueError("window must be positive")
        labels = np.asarray(self.labels)
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be binary")

    def __len__(self) -> int:
        return len(self.labels)

    def design_matrix(self) -> np.ndarray:
        """Columns: intercept, price, prev_price, features..., tenure."""
        return np.column_stack(
            [np.ones(len(self)), self.prices, self.prev_prices, self.features, self.tenures]
        )


def build_churn_labels(panel: SubscriptionPanel, window: int) -> ChurnDataset:
    """Forward-looking cohort labels: 1 iff any churn lands in (t, t+window].

    Rows within ``window`` of the segment's last period are dropped so no
    label is truncated. prev_price falls back to the row's own price on the
    first period of a segment.
    """
    window = int(window)
    lo, hi = panel.period_range
    if window > hi - lo:
        raise WindowTooLong(f"window {window} exceeds panel span {hi - lo}")
    numeric = [f.name for f in panel.feature_schema if f.kind == NUMERIC]
    if len(numeric) != len(panel.feature_schema):
        raise SchemaMismatch("categorical covariates must be encoded before labeling")

    prices, prevs, feats, tenures, labels = [], [], [], [], []
    for seg in panel.segments:
        recs = panel.segment_records(seg)
        periods = np.array([r.period for r in recs])
        churned = np.array([r.churned for r in recs])
        for i, r in enumerate(recs):
            in_window = (periods > r.period) & (periods <= r.period + window)
            if periods[-1] < r.period + window:
                continue  # truncated window
            labels.append(1.0 if churned[in_window].sum() > 0 else 0.0)
            prices.append(r.price)
            prevs.append(recs[i - 1].price if i > 0 else r.price)
            cov = r.covariate_map
            feats.append([float(cov[n]) for n in numeric])
            tenures.append(r.tenure)
    return ChurnDataset(
        prices=np.array(prices),
        prev_prices=np.array(prevs),
        features=np.array(feats) if feats else np.zeros((0, len(numeric))),
        tenures=np.array(tenures),
        labels=np.array(labels),
        feature_names=tuple(numeric),
        window=window,
    )


def _loss_grad(theta: np.ndarray, Z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient (the smooth part)."""
    n = len(y)
    z = Z @ theta
    # log(1 + exp(z)) - y*z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    grad = Z.T @ (sigmoid(z) - y) / n
    return loss, grad


def _soft_threshold(x: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def penalized_loglik(model_theta: np.ndarray, Z: np.ndarray, y: np.ndarray, l1_lambda: float) -> float:
    """Sum-form penalized log-likelihood (intercept unpenalized)."""
    z = Z @ model_theta
    ll = float(np.sum(y * z - np.logaddexp(0.0, z)))
    return ll - l1_lambda * float(np.abs(model_theta[1:]).sum())


def smooth_gradient(theta: np.ndarray, Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of the sum log-likelihood (no penalty term)."""
    return Z.T @ (y - sigmoid(Z @ theta))


def fit_churn(
    data: ChurnDataset,
    l1_lambda: float = 0.0,
    max_iter: int = 5000,
    tol: float = 1e-9,
) -> ChurnModel:
    """Fit the lagged logistic model by FISTA with backtracking.

    ``tol`` bounds the proximal-gradient mapping norm on the mean-scaled
    objective (equivalent argmax to the sum form). Deterministic: no
    randomness anywhere in the fit.
    """
    y = np.asarray(data.labels, dtype=float)
    if y.min() == y.max():
        raise SingleClass("both churn outcomes required to fit")
    Z = data.design_matrix()
    if not np.isfinite(Z).all():
        raise ValueError("non-finite feature values")
    n, d = Z.shape
    lam = float(l1_lambda) / n  # mean scale

    # standardize non-intercept columns: exact reparameterization, so the
    # per-coordinate prox threshold lam/s_j keeps the original penalty
    mean = Z.mean(axis=0)
    mean[0] = 0.0
    sd = Z.std(axis=0)
    sd[0] = 1.0
    sd[sd < 1e-12] = 1.0
    W = (Z - mean) / sd
    thresh = np.zeros(d)
    thresh[1:] = lam / sd[1:]

    theta = np.zeros(d)
    velo = theta.copy()
    t_mom = 1.0
    step = 4.0 / max(float((W * W).sum(axis=0).max() / n), 1e-8)

    best_obj, stall = np.inf, 0
    loss, grad = _loss_grad(velo, W, y)
    for _ in range(max_iter):
        while True:
            cand = _soft_threshold(velo - step * grad, step * thresh)
            delta = cand - velo
            cand_loss, _ = _loss_grad(cand, W, y)
            if cand_loss <= loss + grad @ delta + (delta @ delta) / (2 * step) + 1e-14:
                break
            step *= 0.5
        # gradient mapping at the momentum point
        gmap = np.linalg.norm(delta) / step
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2)) / 2.0
        velo_next = cand + ((t_mom - 1.0) / t_next) * (cand - theta)
        # restart momentum when it points uphill
        if (velo - cand) @ (cand - theta) > 0:
            velo_next = cand
            t_next = 1.0
        theta, velo, t_mom = cand, velo_next, t_next
        loss, grad = _loss_grad(velo, W, y)
        if gmap <= tol:
            break
        obj = cand_loss + float(thresh @ np.abs(cand))
        if obj < best_obj - 1e-15 * max(1.0, abs(best_obj)):
            best_obj, stall = obj, 0
        else:
            stall += 1
            if stall >= 25:  # numerical floor reached
                break
        step *= 2.0  # let backtracking re-shrink if needed

    # map back to the original scale
    theta = theta / sd
    theta[0] -= float(theta[1:] @ mean[1:])

    if l1_lambda == 0.0:
        margins = Z @ theta
        correct = ((margins > 0) == (y > 0.5)).all()
        if correct and float(np.min(np.abs(margins))) > 10.0:
            warnings.warn(
                "perfect separation detected; unpenalized coefficients are unbounded",
                SeparableDataWarning,
            )

    k = len(data.feature_names)
    return ChurnModel(
        theta0=float(theta[0]),
        theta1=float(theta[1]),
        theta2=float(theta[2]),
        theta3=theta[3 : 3 + k].copy(),
        theta4=float(theta[3 + k]),
        l1_lambda=float(l1_lambda),
        feature_names=data.feature_names,
    )


def model_theta(model: ChurnModel) -> np.ndarray:
    """Stacked coefficient vector in design-matrix column order."""
    return np.concatenate(
        [[model.theta0, model.theta1, model.theta2], model.theta3, [model.theta4]]
    )


def fit_l1_path(data: ChurnDataset, lambdas: Sequence[float], **kw) -> list[ChurnModel]:
    return [fit_churn(data, l1_lambda=lam, **kw) for lam in lambdas]
