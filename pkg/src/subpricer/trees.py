"""Gradient-boosted regression trees with exhaustive split search.

Small-data implementation tuned for panel covariate effects: every split is
the exact SSE-optimal one over all (feature, threshold) candidates, which
makes single-tree behavior checkable against brute force.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    subsample: float = 1.0

    def __post_init__(self) -> None:
        if self.n_trees <= 0 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValidationError("n_trees, max_depth, min_leaf must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValidationError("learning_rate must be in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValidationError("subsample must be in (0, 1]")


@dataclass
class _Node:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[int, float, float] | None:
    """Exact best (feature, threshold) by SSE; None when nothing improves.

    Maximizes sum_L^2/n_L + sum_R^2/n_R via prefix sums, equivalent to
    minimizing left+right SSE. Ties break on lowest feature index then
    lowest threshold, keeping fits deterministic.
    """
    n = len(y)
    base = y.sum() ** 2 / n
    best_gain, best = 1e-12 * max(1.0, float(y @ y)), None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        csum = np.cumsum(ys)
        total = csum[-1]
        idx = np.arange(min_leaf, n - min_leaf + 1)
        if len(idx) == 0:
            continue
        idx = idx[xs[idx - 1] < xs[idx]]  # split only between distinct values
        if len(idx) == 0:
            continue
        left = csum[idx - 1]
        score = left**2 / idx + (total - left) ** 2 / (n - idx)
        k = int(np.argmax(score))
        gain = float(score[k] - base)
        if gain > best_gain:
            best_gain = gain
            thr = 0.5 * (xs[idx[k] - 1] + xs[idx[k]])
            best = (j, float(thr), gain)
    return best


def _grow(X: np.ndarray, y: np.ndarray, depth: int, cfg: GbdtConfig) -> _Node:
    node = _Node(value=float(y.mean()))
    if depth >= cfg.max_depth or len(y) < 2 * cfg.min_leaf:
        return node
    split = _best_split(X, y, cfg.min_leaf)
    if split is None:
        return node
    j, thr, _ = split
    mask = X[:, j] <= thr
    node.feature, node.threshold = j, thr
    node.left = _grow(X[mask], y[mask], depth + 1, cfg)
    node.right = _grow(X[~mask], y[~mask], depth + 1, cfg)
    return node


def _predict_node(node: _Node, X: np.ndarray) -> np.ndarray:
    if node.is_leaf:
        return np.full(len(X), node.value)
    out = np.empty(len(X))
    mask = X[:, node.feature] <= node.threshold
    out[mask] = _predict_node(node.left, X[mask])
    out[~mask] = _predict_node(node.right, X[~mask])
    return out


@dataclass
class GradientBoostedTrees:
    """Sequential residual-fitting ensemble under squared-error loss."""

    cfg: GbdtConfig
    base_value: float = 0.0
    trees: list[_Node] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)

    def fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator | None = None) -> "GradientBoostedTrees":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or len(X) != len(y):
            raise ValidationError("X must be (n, k) aligned with y")
        self.base_value = float(y.mean()) if len(y) else 0.0
        self.trees = []
        self.train_losses = []
        if X.shape[1] == 0:
            self.train_losses.append(float(np.mean((y - self.base_value) ** 2)))
            return self
        pred = np.full(len(y), self.base_value)
        n_sub = max(1, int(round(self.cfg.subsample * len(y))))
        for _ in range(self.cfg.n_trees):
            resid = y - pred
            if self.cfg.subsample < 1.0:
                if rng is None:
                    raise ValidationError("subsample < 1 requires an rng")
                rows = np.sort(rng.choice(len(y), size=n_sub, replace=False))
            else:
                rows = slice(None)
            tree = _grow(X[rows], resid[rows], 0, self.cfg)
            pred = pred + self.cfg.learning_rate * _predict_node(tree, X)
            self.trees.append(tree)
            self.train_losses.append(float(np.mean((y - pred) ** 2)))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValidationError("X must be 2-dimensional")
        out = np.full(len(X), self.base_value)
        for tree in self.trees:
            out += self.cfg.learning_rate * _predict_node(tree, X)
        return out
