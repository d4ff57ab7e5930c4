"""Sequential predictive conformal inference with quantile regression forests.

The forest consumes sliding windows of the w most recent residuals as
features and predicts the next residual's conditional quantiles by pooling
leaf target multisets across trees (uniform tree weights).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .errors import ConfigError


@dataclass
class ForestConfig:
    n_trees: int = 25
    min_leaf: int = 5
    max_depth: int = 12        # 0 = single leaf per tree (empirical quantiles)
    max_features: str | int = "sqrt"
    refit_every: int = 100     # test steps between forest refits; 1 = fully online


class QuantileForest:
    """Random forest whose leaves retain training-target multisets.

    Tree induction is delegated to sklearn; quantile pooling is done here.
    With max_depth = 0 every tree degenerates to one leaf holding the full
    training target set, reducing predictions to empirical quantiles.
    """

    def __init__(self, config: ForestConfig, seed: int):
        self.config = config
        self.seed = seed
        self._forest = None
        self._leaf_targets = None   # list per tree: dict leaf_id -> target array
        self._all_targets = None
        self.window = None

    def fit(self, residuals: np.ndarray, w: int) -> "QuantileForest":
        residuals = np.asarray(residuals, dtype=float)
        if residuals.size <= w + self.config.min_leaf:
            raise ConfigError(
                f"need more than w + min_leaf = {w + self.config.min_leaf} "
                f"residuals, got {residuals.size}"
            )
        self.window = w
        X = np.lib.stride_tricks.sliding_window_view(residuals[:-1], w)
        y = residuals[w:]
        self._all_targets = y
        if self.config.max_depth == 0:
            self._forest = None
            self._leaf_targets = [ {0: y} for _ in range(self.config.n_trees) ]
            return self
        self._forest = RandomForestRegressor(
            n_estimators=self.config.n_trees,
            min_samples_leaf=self.config.min_leaf,
            max_depth=self.config.max_depth,
            max_features=self.config.max_features,
            bootstrap=True,
            random_state=self.seed,
            n_jobs=1,
        )
        self._forest.fit(X, y)
        self._leaf_targets = []
        for est in self._forest.estimators_:
            leaves = est.apply(X)
            groups: dict[int, list] = {}
            for leaf, target in zip(leaves, y):
                groups.setdefault(int(leaf), []).append(target)
            self._leaf_targets.append({k: np.asarray(v) for k, v in groups.items()})
        return self

    def pooled_targets(self, window_features: np.ndarray) -> np.ndarray:
        x = np.asarray(window_features, dtype=float).reshape(1, -1)
        if x.shape[1] != self.window:
            raise ConfigError(f"window features must have length {self.window}")
        if self._forest is None:
            pools = [d[0] for d in self._leaf_targets]
        else:
            pools = []
            for est, targets in zip(self._forest.estimators_, self._leaf_targets):
                leaf = int(est.apply(x)[0])
                pools.append(targets[leaf])
        return np.concatenate(pools)

    def predict_quantile(self, window_features: np.ndarray, q) -> np.ndarray:
        """Empirical q-quantile(s) of the pooled leaf multiset."""
        q = np.atleast_1d(q)
        if np.any(q <= 0) or np.any(q >= 1):
            raise ConfigError("quantile levels must lie strictly in (0, 1)")
        pooled = self.pooled_targets(window_features)
        return np.quantile(pooled, q)

    def predict_quantile_batch(self, windows: np.ndarray, q) -> np.ndarray:
        """Per-row pooled-leaf quantiles for a batch of window features.

        Row-for-row identical to calling `predict_quantile` on each window;
        batching only amortizes the per-tree leaf lookups.
        """
        q = np.atleast_1d(q)
        if np.any(q <= 0) or np.any(q >= 1):
            raise ConfigError("quantile levels must lie strictly in (0, 1)")
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 2 or windows.shape[1] != self.window:
            raise ConfigError(f"windows must have shape (n, {self.window})")
        n = windows.shape[0]
        out = np.empty((n, q.size))
        if self._forest is None:
            vals = np.quantile(np.concatenate([d[0] for d in self._leaf_targets]), q)
            out[:] = vals
            return out
        leaves = np.column_stack([est.apply(windows)
                                  for est in self._forest.estimators_])
        for i in range(n):
            pools = [targets[int(leaf)] for leaf, targets
                     in zip(leaves[i], self._leaf_targets)]
            out[i] = np.quantile(np.concatenate(pools), q)
        return out


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    alpha: float
    beta_hat: float
    center: float


class ResidualBuffer:
    """Most recent residuals, oldest to newest, used as window features."""

    def __init__(self, w: int):
        self.w = w
        self._ring = deque(maxlen=w)

    def extend(self, values):
        for v in values:
            self._ring.append(float(v))

    def append(self, value: float):
        self._ring.append(float(value))

    def features(self) -> np.ndarray:
        if len(self._ring) < self.w:
            raise ConfigError(f"buffer holds {len(self._ring)} residuals, need {self.w}")
        return np.asarray(self._ring)

    def __len__(self):
        return len(self._ring)


@dataclass
class SPCIResult:
    intervals: list[PredictionInterval]
    coverage: float
    mean_width: float
    alpha: float
    w: int

    def to_csv(self, path, actuals):
        rows = ["t,center,lower,upper,actual,hit"]
        for t, (iv, a) in enumerate(zip(self.intervals, actuals)):
            hit = int(iv.lower <= a <= iv.upper)
            rows.append(f"{t},{iv.center!r},{iv.lower!r},{iv.upper!r},{a!r},{hit}")
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")

    def metrics_json(self) -> str:
        return json.dumps(
            {"alpha": self.alpha, "w": self.w, "coverage": self.coverage,
             "mean_width": self.mean_width},
            sort_keys=True,
        )


def coverage_and_width(intervals, actuals) -> tuple[float, float]:
    if len(intervals) != len(actuals):
        raise ConfigError("intervals and actuals must have equal length")
    hits = [iv.lower <= a <= iv.upper for iv, a in zip(intervals, actuals)]
    widths = [iv.upper - iv.lower for iv in intervals]
    return float(np.mean(hits)), float(np.mean(widths))


def spci_run(centers, actuals, calibration_residuals, alpha: float = 0.1,
             w: int = 200, forest_config: ForestConfig | None = None,
             seed: int = 0) -> SPCIResult:
    """Sequential conformal intervals over a test stream.

    `centers` are the point predictions, `actuals` the observed values;
    `calibration_residuals` seed the residual history (cascaded train +
    validation predictions).  After each step the realized residual is
    appended and the window slides forward; the forest refits every
    `refit_every` steps on the full residual history.
    """
    cfg = forest_config or ForestConfig()
    centers = np.asarray(centers, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if centers.shape != actuals.shape:
        raise ConfigError("centers and actuals must have equal length")
    calib = np.asarray(calibration_residuals, dtype=float)
    if calib.size < w + 1:
        raise ConfigError(f"need at least w + 1 = {w + 1} calibration residuals")

    beta = alpha / 2.0
    n_test = centers.size
    # realized residuals only enter the history after their interval is
    # emitted, so batching queries between forest refits is exact: the
    # window for step t is always the w residuals preceding it.
    residuals = actuals - centers
    history = np.concatenate([calib, residuals])
    n_calib = calib.size
    intervals: list[PredictionInterval] = []
    chunk = cfg.refit_every if cfg.refit_every >= 1 else n_test
    for t0 in range(0, n_test, chunk):
        t1 = min(t0 + chunk, n_test)
        forest = QuantileForest(cfg, seed).fit(history[:n_calib + t0], w)
        windows = np.lib.stride_tricks.sliding_window_view(
            history[n_calib + t0 - w:n_calib + t1 - 1], w
        )
        qs = forest.predict_quantile_batch(windows, [beta, 1.0 - alpha + beta])
        for t in range(t0, t1):
            lo_q = float(qs[t - t0].min())
            hi_q = float(qs[t - t0].max())
            intervals.append(PredictionInterval(
                lower=centers[t] + lo_q, upper=centers[t] + hi_q,
                alpha=alpha, beta_hat=beta, center=float(centers[t]),
            ))
    cov, width = coverage_and_width(intervals, actuals)
    return SPCIResult(intervals=intervals, coverage=cov, mean_width=width,
                      alpha=alpha, w=w)


def split_conformal_interval_width(calibration_residuals, alpha: float) -> float:
    """Static split-conformal width q_{1-a/2} - q_{a/2} on the calibration set."""
    r = np.asarray(calibration_residuals, dtype=float)
    lo, hi = np.quantile(r, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(hi - lo)
