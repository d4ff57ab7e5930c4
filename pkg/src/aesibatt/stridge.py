"""Sequentially thresholded ridge regression over a feature library."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import ConfigError, NumericError
from .library import LibrarySpec, ScalingParams, build_theta


def _ridge_from_gram(G, b, lambda1):
    """Solve (G + lambda1 I) xi = b via Cholesky."""
    m = G.shape[0]
    A = G + lambda1 * np.eye(m)
    try:
        c = cho_factor(A, lower=True)
    except LinAlgError as exc:
        if lambda1 == 0:
            raise NumericError(
                "normal matrix is rank-deficient; use lambda1 > 0"
            ) from exc
        raise NumericError(f"ridge solve failed: {exc}") from exc
    return cho_solve(c, b)


def ridge_solve(theta: np.ndarray, y: np.ndarray, lambda1: float) -> np.ndarray:
    """Ridge solution of (Theta^T Theta + lambda1 I) xi = Theta^T y.

    The penalty is applied uniformly, intercept column included.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    if theta.shape[0] != y.shape[0]:
        raise ConfigError("theta rows must match target length")
    if lambda1 < 0:
        raise ConfigError("lambda1 must be non-negative")
    return _ridge_from_gram(theta.T @ theta, theta.T @ y, lambda1)


@dataclass
class StridgeResult:
    xi: np.ndarray
    active: np.ndarray          # boolean mask over columns
    n_iters: int
    converged: bool
    all_zero: bool              # every coefficient thresholded away

    @property
    def active_count(self) -> int:
        return int(self.active.sum())


def stridge_gram(G: np.ndarray, b: np.ndarray, lambda1: float, lambda2: float,
                 max_iters: int = 20) -> StridgeResult:
    """STRidge on precomputed Gram matrix G = Theta^T Theta, b = Theta^T y.

    Alternates ridge solves on the active set with hard thresholding at
    lambda2; the active set shrinks monotonically.  The terminal active set
    is refit with the same lambda1 penalty.
    """
    if lambda2 < 0:
        raise ConfigError("lambda2 must be non-negative")
    if max_iters < 1:
        raise ConfigError("max_iters must be at least 1")
    m = G.shape[0]
    active = np.ones(m, dtype=bool)
    xi = np.zeros(m)
    n_iters = 0
    converged = False
    for n_iters in range(1, max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            converged = True
            break
        sub = _ridge_from_gram(G[np.ix_(idx, idx)], b[idx], lambda1)
        keep = np.abs(sub) >= lambda2
        xi = np.zeros(m)
        xi[idx[keep]] = sub[keep]
        new_active = np.zeros(m, dtype=bool)
        new_active[idx[keep]] = True
        if np.array_equal(new_active, active):
            converged = True
            break
        active = new_active
    return StridgeResult(
        xi=xi, active=active & (xi != 0), n_iters=n_iters,
        converged=converged, all_zero=not np.any(xi),
    )


def stridge(theta: np.ndarray, y: np.ndarray, lambda1: float, lambda2: float,
            max_iters: int = 20) -> StridgeResult:
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    if theta.shape[0] != y.shape[0]:
        raise ConfigError("theta rows must match target length")
    return stridge_gram(theta.T @ theta, theta.T @ y, lambda1, lambda2, max_iters)


@dataclass
class SparseModel:
    """Sparse coefficient vector bound to its library and scaling."""

    xi: np.ndarray
    spec: LibrarySpec
    scaling: ScalingParams
    lambda1: float
    lambda2: float
    all_zero: bool = False

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.xi))

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.xi)

    def predict_scaled(self, X_scaled: np.ndarray) -> np.ndarray:
        """One-step-ahead scaled-error prediction Theta(X) @ xi."""
        idx = self.active_indices
        if idx.size == 0:
            X = np.atleast_2d(np.asarray(X_scaled))
            return np.zeros(X.shape[0])
        theta = build_theta(X_scaled, self.spec, columns=idx)
        return theta @ self.xi[idx]

    def to_json(self) -> str:
        return json.dumps(
            {
                "spec": json.loads(self.spec.to_json()),
                "xi": self.xi.tolist(),
                "lambda1": self.lambda1,
                "lambda2": self.lambda2,
                "scaling": self.scaling.to_dict(),
                "all_zero": self.all_zero,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SparseModel":
        d = json.loads(text)
        return cls(
            xi=np.asarray(d["xi"], dtype=float),
            spec=LibrarySpec.from_json(json.dumps(d["spec"])),
            scaling=ScalingParams.from_dict(d["scaling"]),
            lambda1=d["lambda1"],
            lambda2=d["lambda2"],
            all_zero=d["all_zero"],
        )


def fit_sparse_model(theta, y, spec, scaling, lambda1, lambda2,
                     max_iters: int = 20) -> SparseModel:
    res = stridge(theta, y, lambda1, lambda2, max_iters)
    return SparseModel(res.xi, spec, scaling, lambda1, lambda2, all_zero=res.all_zero)
