"""Hybrid voltage predictor: physics model plus learned error dynamics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleModel
from .errors import ConfigError, DataError
from .espm import CellModel, CellParameters, SimulationResult
from .library import PHI_FUNCS, chebyshev

E_CHANNEL = 0
STATE_BOUND = 3.0


class ClosedLoopEvaluator:
    """Steps the error recursion with per-row input factors precomputed.

    Term values factor into an error-state part and an input-only part;
    the latter is vectorized over all rows up front so the sequential
    closed-loop rollout touches only the error-dependent factors.
    """

    def __init__(self, model: EnsembleModel, X_inputs_scaled: np.ndarray):
        # X_inputs_scaled: (n, 6) scaled channels with column 0 (error) ignored
        self.model = model
        idx = np.flatnonzero(model.xi_ens)
        self.coeffs = model.xi_ens[idx]
        n = X_inputs_scaled.shape[0]
        self.parts = []       # per active term: (mode, e_degree/func, input vector)
        for j in idx:
            term = model.spec.terms[j]
            if term.kind == "constant":
                self.parts.append(("poly", 0, np.ones(n)))
            elif term.kind in ("chebyshev", "cross"):
                col = np.ones(n)
                for ch, deg in enumerate(term.degrees):
                    if ch != E_CHANNEL and deg > 0:
                        col = col * chebyshev(deg, X_inputs_scaled[:, ch])
                self.parts.append(("poly", term.degrees[E_CHANNEL], col))
            else:  # phi
                in_args = [c for c in term.arg_channels if c != E_CHANNEL]
                col = np.ones(n)
                for ch in in_args:
                    col = col * X_inputs_scaled[:, ch]
                if E_CHANNEL in term.arg_channels:
                    self.parts.append(("phi_e", term.func, col))
                else:
                    self.parts.append(("poly", 0, PHI_FUNCS[term.func](col)))

    def step(self, e_scaled: float, k: int) -> float:
        """Predicted scaled error at k+1 from error state and inputs at k."""
        total = 0.0
        for coeff, (mode, tag, col) in zip(self.coeffs, self.parts):
            if mode == "poly":
                value = col[k] if tag == 0 else col[k] * float(chebyshev(tag, e_scaled))
            else:
                value = float(PHI_FUNCS[tag](e_scaled * col[k]))
            total += coeff * value
        return total


@dataclass
class HybridModel:
    params: CellParameters
    ensemble: EnsembleModel

    @property
    def scaling(self):
        return self.ensemble.scaling


@dataclass
class HybridPrediction:
    v_espm: np.ndarray
    v_hybrid: np.ndarray          # closed-loop error recursion
    v_hybrid_teacher: np.ndarray  # teacher-forced (measured error regressor)
    e_measured: np.ndarray
    e_hat: np.ndarray             # closed-loop predicted error [V]
    sim: SimulationResult


def scaled_channels(sim: SimulationResult, e_measured: np.ndarray,
                    scaling) -> np.ndarray:
    X = np.column_stack([e_measured, sim.I, sim.cs_p, sim.cs_n, sim.ce_0, sim.ce_L])
    return scaling.apply(X)


def predict(model: HybridModel, current, v_measured, dt: float,
            soc0: float = 1.0) -> HybridPrediction:
    """Hybrid voltage series over a measured dataset.

    The physics rollout supplies latent features; the learned model evolves
    the scaled error state in closed loop, seeded with the first measured
    residual.  A teacher-forced variant (measured error as regressor) is
    returned alongside as a diagnostic.
    """
    current = np.asarray(current, dtype=float)
    v_measured = np.asarray(v_measured, dtype=float)
    if current.shape != v_measured.shape:
        raise DataError("current and measured voltage must have equal length")
    cell = CellModel(model.params)
    sim = cell.simulate(current, dt, soc0=soc0)
    v_espm = sim.V
    e_meas = v_measured - v_espm
    scaling = model.scaling
    n = current.size

    if model.ensemble.active_count == 0:
        # no learned correction: the hybrid is exactly the physics model
        zeros = np.zeros(n)
        return HybridPrediction(
            v_espm=v_espm, v_hybrid=v_espm.copy(),
            v_hybrid_teacher=v_espm.copy(), e_measured=e_meas,
            e_hat=zeros, sim=sim,
        )

    X_scaled = scaled_channels(sim, e_meas, scaling)
    # teacher-forced: one-step prediction from measured error at k
    e_pred_scaled = model.ensemble.predict_error(X_scaled[:-1])
    e_teacher = scaling.invert_channel(e_pred_scaled, E_CHANNEL)
    v_teacher = v_espm.copy()
    v_teacher[1:] = v_espm[1:] + e_teacher

    # closed loop: error state evolves on its own predictions.  The state is
    # kept inside STATE_BOUND: the library scaling maps training data to
    # [-1, 1], so polynomial terms evaluated far outside that range are
    # extrapolation artifacts that can otherwise blow up the recursion.
    evaluator = ClosedLoopEvaluator(model.ensemble, X_scaled)
    e_hat_scaled = np.empty(n)
    e_hat_scaled[0] = scaling.apply_channel(e_meas[0], E_CHANNEL)
    for k in range(n - 1):
        nxt = evaluator.step(e_hat_scaled[k], k)
        e_hat_scaled[k + 1] = min(max(nxt, -STATE_BOUND), STATE_BOUND)
    e_hat = np.asarray(scaling.invert_channel(e_hat_scaled, E_CHANNEL))
    v_hybrid = v_espm + e_hat
    v_hybrid[0] = v_espm[0] + e_meas[0]
    return HybridPrediction(
        v_espm=v_espm, v_hybrid=v_hybrid, v_hybrid_teacher=v_teacher,
        e_measured=e_meas, e_hat=e_hat, sim=sim,
    )


def mser(v_exp, v_espm, v_h) -> float:
    """Mean squared error reduction of the hybrid over the physics model [%]."""
    v_exp = np.asarray(v_exp, dtype=float)
    v_espm = np.asarray(v_espm, dtype=float)
    v_h = np.asarray(v_h, dtype=float)
    if not v_exp.shape == v_espm.shape == v_h.shape:
        raise ConfigError("mser inputs must have equal length")
    mse_espm = float(np.mean((v_exp - v_espm) ** 2))
    if mse_espm == 0:
        raise ConfigError("mser undefined: physics-model MSE is zero")
    mse_h = float(np.mean((v_exp - v_h) ** 2))
    return 100.0 * (mse_espm - mse_h) / mse_espm


def error_map(currents, socs, errors, i_bins, soc_bins,
              signed: bool = True) -> np.ndarray:
    """Per-bin mean (signed or absolute) voltage error over an (I, SOC) grid.

    Samples outside the outermost edges are assigned to the boundary bins.
    Empty bins are NaN.
    """
    i_bins = np.asarray(i_bins, dtype=float)
    soc_bins = np.asarray(soc_bins, dtype=float)
    if np.any(np.diff(i_bins) <= 0) or np.any(np.diff(soc_bins) <= 0):
        raise ConfigError("bin edges must be strictly increasing")
    currents = np.asarray(currents, dtype=float)
    socs = np.asarray(socs, dtype=float)
    errors = np.abs(errors) if not signed else np.asarray(errors, dtype=float)
    ii = np.clip(np.digitize(currents, i_bins) - 1, 0, i_bins.size - 2)
    jj = np.clip(np.digitize(socs, soc_bins) - 1, 0, soc_bins.size - 2)
    grid = np.full((i_bins.size - 1, soc_bins.size - 1), np.nan)
    counts = np.zeros_like(grid)
    sums = np.zeros_like(grid)
    np.add.at(counts, (ii, jj), 1.0)
    np.add.at(sums, (ii, jj), errors)
    populated = counts > 0
    grid[populated] = sums[populated] / counts[populated]
    return grid


def error_map_to_csv(grid, i_bins, soc_bins, path):
    header = "i_edges=" + ";".join(repr(float(v)) for v in i_bins) + \
        " soc_edges=" + ";".join(repr(float(v)) for v in soc_bins)
    np.savetxt(path, grid, delimiter=",", header=header)


@dataclass
class EvaluationReport:
    mse_espm: float
    mse_hybrid: float
    mser: float
    per_split: dict

    def to_json(self) -> str:
        return json.dumps(
            {"mse_espm": self.mse_espm, "mse_hybrid": self.mse_hybrid,
             "mser": self.mser, "per_split": self.per_split},
            sort_keys=True,
        )


def evaluate_datasets(model: HybridModel, datasets: dict, dt: float,
                      soc0: float = 1.0) -> EvaluationReport:
    """MSE / MSER per split plus the pooled headline numbers.

    `datasets` maps split tags to (current, v_measured) pairs.
    """
    per_split = {}
    all_exp, all_espm, all_h = [], [], []
    for tag, (current, v_meas) in datasets.items():
        pred = predict(model, current, v_meas, dt, soc0=soc0)
        per_split[tag] = {
            "mse_espm": float(np.mean((v_meas - pred.v_espm) ** 2)),
            "mse_hybrid": float(np.mean((v_meas - pred.v_hybrid) ** 2)),
            "mser": mser(v_meas, pred.v_espm, pred.v_hybrid),
            "mser_teacher": mser(v_meas, pred.v_espm, pred.v_hybrid_teacher),
        }
        all_exp.append(np.asarray(v_meas))
        all_espm.append(pred.v_espm)
        all_h.append(pred.v_hybrid)
    v_exp = np.concatenate(all_exp)
    v_espm = np.concatenate(all_espm)
    v_h = np.concatenate(all_h)
    return EvaluationReport(
        mse_espm=float(np.mean((v_exp - v_espm) ** 2)),
        mse_hybrid=float(np.mean((v_exp - v_h) ** 2)),
        mser=mser(v_exp, v_espm, v_h),
        per_split=per_split,
    )
