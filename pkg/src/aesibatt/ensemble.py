"""Moving block bootstrap, OOB model selection, bagging and stability selection."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .library import LibrarySpec, ScalingParams, build_theta
from .stridge import SparseModel, StridgeResult, stridge_gram


@dataclass
class BootstrapSample:
    indices: np.ndarray      # length n, concatenated contiguous blocks
    oob_indices: np.ndarray  # complement of unique in-bag rows

    @property
    def unique_coverage(self) -> float:
        n = self.indices.size
        return np.unique(self.indices).size / n


def mbb_resample(n: int, B: int, rng) -> BootstrapSample:
    """Draw one moving-block-bootstrap sample of length n with block size B.

    Block start positions are uniform on [0, n - B]; ceil(n / B) blocks are
    concatenated and truncated to n rows.
    """
    if not 1 <= B <= n:
        raise ConfigError(f"block size B={B} must lie in [1, n={n}]")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n_blocks = -(-n // B)
    starts = rng.integers(0, n - B + 1, size=n_blocks)
    idx = (starts[:, None] + np.arange(B)[None, :]).ravel()[:n]
    in_bag = np.zeros(n, dtype=bool)
    in_bag[idx] = True
    return BootstrapSample(indices=idx, oob_indices=np.flatnonzero(~in_bag))


def expected_unique_coverage(n: int, B: int) -> float:
    """Closed-form expected fraction of unique rows, 1 - (1 - 1/n)^(n/B).

    This is the closed form used for Fig.-style coverage estimates; it
    degrades for B comparable to n (at B = n it gives ~1/n while the
    empirical coverage is 1).  `mbb_resample` provides the Monte Carlo
    estimate alongside.
    """
    if not 1 <= B <= n:
        raise ConfigError(f"block size B={B} must lie in [1, n={n}]")
    return 1.0 - (1.0 - 1.0 / n) ** (n / B)


@dataclass
class EnsembleMember:
    xi: np.ndarray
    oob_mse: float
    index: int               # bootstrap iteration the member came from
    sample: BootstrapSample = field(repr=False)


@dataclass
class EnsembleConfig:
    n_boot: int = 100
    top_fraction: float = 0.1
    block_size: int = 500
    max_iters: int = 20


def fit_ensemble(theta: np.ndarray, y: np.ndarray, lambda1: float, lambda2: float,
                 config: EnsembleConfig, seed: int) -> list[EnsembleMember]:
    """Fit STRidge on MBB resamples and keep the top members by OOB MSE.

    Each member's RNG stream derives from (seed, member index) so serial and
    parallel execution agree bitwise.  Members with an empty OOB set are
    excluded with a warning.
    """
    if config.n_boot < 10:
        raise ConfigError("n_boot must be at least 10")
    if not 0 < config.top_fraction <= 1:
        raise ConfigError("top_fraction must lie in (0, 1]")
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    n = theta.shape[0]

    members = []
    for b in range(config.n_boot):
        rng = np.random.default_rng([seed, b])
        sample = mbb_resample(n, config.block_size, rng)
        if sample.oob_indices.size == 0:
            warnings.warn(f"member {b} has an empty OOB set; excluded")
            continue
        t_b = theta[sample.indices]
        res: StridgeResult = stridge_gram(
            t_b.T @ t_b, t_b.T @ y[sample.indices], lambda1, lambda2, config.max_iters
        )
        oob_pred = theta[sample.oob_indices] @ res.xi
        oob_mse = float(np.mean((y[sample.oob_indices] - oob_pred) ** 2))
        members.append(EnsembleMember(res.xi, oob_mse, b, sample))

    n_top = int(np.ceil(config.top_fraction * config.n_boot))
    n_top = min(max(n_top, 1), len(members))
    members.sort(key=lambda m: (m.oob_mse, m.index))  # stable tie-break by index
    return members[:n_top]


def bag(xis: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of member coefficient vectors."""
    if not xis:
        raise ConfigError("bagging needs at least one member")
    lengths = {x.shape[0] for x in xis}
    if len(lengths) != 1:
        raise ConfigError("members must share one library")
    return np.mean(np.stack(xis), axis=0)


def inclusion_probabilities(xis: list[np.ndarray]) -> np.ndarray:
    return np.mean([x != 0 for x in xis], axis=0)


def stability_select(xis: list[np.ndarray], tau: float, theta_full: np.ndarray,
                     y: np.ndarray, lambda1: float, lambda2: float,
                     max_iters: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Retain terms with inclusion probability > tau; refit on full data.

    Returns (xi over all columns, inclusion probabilities).  The refit is a
    full STRidge pass (ridge + thresholding) on the original training data
    restricted to the retained columns.
    """
    if not 0 < tau < 1:
        raise ConfigError("tau must lie in (0, 1)")
    pi = inclusion_probabilities(xis)
    keep = np.flatnonzero(pi > tau)
    m = pi.size
    xi = np.zeros(m)
    if keep.size == 0:
        warnings.warn("no term exceeds the stability threshold; empty model")
        return xi, pi
    sub = theta_full[:, keep]
    res = stridge_gram(sub.T @ sub, sub.T @ y, lambda1, lambda2, max_iters)
    xi[keep] = res.xi
    return xi, pi


@dataclass
class EnsembleModel:
    """Aggregated sparse error model plus its member ensemble."""

    members: list[SparseModel]
    method: str                       # bagging | stability
    xi_ens: np.ndarray
    inclusion_probs: np.ndarray
    tau: float | None
    oob_scores: list[float]
    spec: LibrarySpec
    scaling: ScalingParams
    lambda1: float
    lambda2: float

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.xi_ens))

    def predict_error(self, X_scaled: np.ndarray) -> np.ndarray:
        """Scaled error prediction at k+1 from scaled features at k."""
        X = np.atleast_2d(np.asarray(X_scaled, dtype=float))
        if not np.all(np.isfinite(X)):
            raise ConfigError("non-finite features passed to predict_error")
        idx = np.flatnonzero(self.xi_ens)
        if idx.size == 0:
            return np.zeros(X.shape[0])
        theta = build_theta(X, self.spec, columns=idx)
        return theta @ self.xi_ens[idx]

    def to_json(self) -> str:
        return json.dumps(
            {
                "method": self.method,
                "tau": self.tau,
                "xi_ens": self.xi_ens.tolist(),
                "inclusion_probs": self.inclusion_probs.tolist(),
                "oob_scores": list(self.oob_scores),
                "member_xis": [m.xi.tolist() for m in self.members],
                "lambda1": self.lambda1,
                "lambda2": self.lambda2,
                "spec": json.loads(self.spec.to_json()),
                "scaling": self.scaling.to_dict(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "EnsembleModel":
        d = json.loads(text)
        spec = LibrarySpec.from_json(json.dumps(d["spec"]))
        scaling = ScalingParams.from_dict(d["scaling"])
        members = [
            SparseModel(np.asarray(x, dtype=float), spec, scaling,
                        d["lambda1"], d["lambda2"])
            for x in d["member_xis"]
        ]
        return cls(
            members=members,
            method=d["method"],
            xi_ens=np.asarray(d["xi_ens"], dtype=float),
            inclusion_probs=np.asarray(d["inclusion_probs"], dtype=float),
            tau=d["tau"],
            oob_scores=list(d["oob_scores"]),
            spec=spec,
            scaling=scaling,
            lambda1=d["lambda1"],
            lambda2=d["lambda2"],
        )


def build_ensemble_model(theta, y, spec, scaling, lambda1, lambda2, method,
                         config: EnsembleConfig, seed: int,
                         tau: float | None = None) -> EnsembleModel:
    """Fit members, aggregate by `method`, and package the result."""
    if method not in ("bagging", "stability"):
        raise ConfigError(f"unknown ensemble method '{method}'")
    members = fit_ensemble(theta, y, lambda1, lambda2, config, seed)
    xis = [m.xi for m in members]
    pi = inclusion_probabilities(xis)
    if method == "bagging":
        xi_ens = bag(xis)
    else:
        if tau is None:
            raise ConfigError("stability selection requires tau")
        xi_ens, pi = stability_select(xis, tau, theta, y, lambda1, lambda2,
                                      config.max_iters)
    sparse_members = [
        SparseModel(m.xi, spec, scaling, lambda1, lambda2) for m in members
    ]
    return EnsembleModel(
        members=sparse_members, method=method, xi_ens=xi_ens,
        inclusion_probs=pi, tau=tau, oob_scores=[m.oob_mse for m in members],
        spec=spec, scaling=scaling, lambda1=lambda1, lambda2=lambda2,
    )
