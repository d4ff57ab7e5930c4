"""SVD-based importance ranking of active library terms."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError


@dataclass
class ImportanceReport:
    term_names: list
    scores: np.ndarray            # signed weighted-average scores
    singular_values: np.ndarray
    ranking: list                 # term indices, descending |score|

    def to_csv(self, path):
        rows = ["rank,term,score,abs_score"]
        for rank, idx in enumerate(self.ranking, start=1):
            s = self.scores[idx]
            rows.append(f"{rank},{self.term_names[idx]},{s!r},{abs(s)!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


def svd_rank(theta_active: np.ndarray, xi_active: np.ndarray,
             term_names=None) -> ImportanceReport:
    """Rank predictors by weighted-average projection onto left singular vectors.

    Forms S with columns theta_j * xi_j, takes the thin SVD S = U Sigma V*,
    solves the per-column least squares u_j = argmin ||S_j - U u_j|| (equal
    to U^T S_j since U has orthonormal columns; both paths are computed and
    cross-checked), and scores each predictor as sum_k u_{j,k} sigma_k over
    sum_k sigma_k.
    """
    theta_active = np.asarray(theta_active, dtype=float)
    xi_active = np.asarray(xi_active, dtype=float)
    if theta_active.ndim != 2 or theta_active.shape[1] < 1:
        raise ConfigError("theta_active needs at least one column")
    n, m = theta_active.shape
    if n < m:
        raise ConfigError("theta_active needs at least as many rows as columns")
    if xi_active.shape != (m,):
        raise ConfigError("xi_active length must match column count")
    if term_names is None:
        term_names = [f"term_{j}" for j in range(m)]

    S = theta_active * xi_active
    if not np.any(S):
        warnings.warn("zero feature matrix; all importance scores are zero")
        scores = np.zeros(m)
        return ImportanceReport(list(term_names), scores, np.zeros(m), list(range(m)))
    try:
        U, sigma, _ = np.linalg.svd(S, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed to converge: {exc}") from exc
    # singular-vector signs are arbitrary; fix each so its largest-magnitude
    # component is positive, making scores reproducible and invariant under
    # column permutations of S
    flip = U[np.abs(U).argmax(axis=0), np.arange(U.shape[1])] < 0
    U[:, flip] *= -1.0

    u_direct = U.T @ S                                   # (m, m): u_{j,k} = u_direct[k, j]
    u_lstsq, *_ = np.linalg.lstsq(U, S, rcond=None)
    if not np.allclose(u_direct, u_lstsq, atol=1e-10):
        raise NumericError("least-squares and U^T S projection paths disagree")

    scores = (sigma @ u_direct) / sigma.sum()
    ranking = sorted(range(m), key=lambda j: (-abs(scores[j]), j))
    return ImportanceReport(list(term_names), scores, sigma, ranking)
