"""End-to-end glue: datasets -> error targets -> fitted models -> intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import ForestConfig, SPCIResult, spci_run
from .data import Dataset
from .ensemble import EnsembleConfig, EnsembleModel, build_ensemble_model
from .errors import ConfigError
from .espm import CellModel, CellParameters, SimulationResult
from .evolution import SearchData
from .hybrid import E_CHANNEL, HybridModel, predict, scaled_channels
from .library import LibrarySpec, ScalingParams, build_theta


@dataclass
class PreparedSplit:
    dataset: Dataset
    sim: SimulationResult
    e: np.ndarray          # measured voltage error [V]


def prepare_split(params: CellParameters, ds: Dataset, soc0: float = 1.0) -> PreparedSplit:
    """Nominal physics rollout and the measured voltage error for one dataset."""
    model = CellModel(params)
    sim = model.simulate(ds.I, ds.dt, soc0=soc0)
    return PreparedSplit(dataset=ds, sim=sim, e=ds.V - sim.V)


def search_data(train: PreparedSplit, valid: PreparedSplit) -> SearchData:
    """One-step-ahead regression matrices, scaling frozen on the train split."""
    X_train_raw = np.column_stack([
        train.e, train.sim.I, train.sim.cs_p, train.sim.cs_n,
        train.sim.ce_0, train.sim.ce_L,
    ])
    scaling = ScalingParams.fit(X_train_raw)
    Xt = scaling.apply(X_train_raw)
    Xv = scaled_channels(valid.sim, valid.e, scaling)
    return SearchData(
        X_train=Xt[:-1], y_train=Xt[1:, E_CHANNEL],
        X_valid=Xv[:-1], y_valid=Xv[1:, E_CHANNEL],
        scaling=scaling,
    )


def fit_fixed(data: SearchData, spec: LibrarySpec, lambda1: float, lambda2: float,
              method: str, config: EnsembleConfig, seed: int,
              tau: float | None = None) -> EnsembleModel:
    """Ensemble fit at fixed hyperparameters (no evolutionary search)."""
    theta = build_theta(data.X_train, spec)
    return build_ensemble_model(
        theta, data.y_train, spec, data.scaling, lambda1, lambda2, method,
        config, seed, tau=tau,
    )


def aesi_residuals(model: EnsembleModel, split: PreparedSplit) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(centers, actuals, residuals) of one-step error predictions, in volts."""
    X = scaled_channels(split.sim, split.e, model.scaling)
    pred_scaled = model.predict_error(X[:-1])
    centers = np.asarray(model.scaling.invert_channel(pred_scaled, E_CHANNEL))
    actuals = split.e[1:]
    return centers, actuals, actuals - centers


def run_intervals(model: EnsembleModel, params: CellParameters,
                  calibration: list[PreparedSplit], test: PreparedSplit,
                  alpha: float = 0.1, w: int = 200,
                  forest_config: ForestConfig | None = None,
                  seed: int = 0) -> tuple[SPCIResult, np.ndarray]:
    """SPCI intervals for the voltage-error predictions on a test split.

    Calibration residuals come from the cascaded train + validation
    predictions; returns the interval series plus the test actuals.
    """
    if not calibration:
        raise ConfigError("at least one calibration split is required")
    calib_res = np.concatenate([aesi_residuals(model, s)[2] for s in calibration])
    centers, actuals, _ = aesi_residuals(model, test)
    result = spci_run(centers, actuals, calib_res, alpha=alpha, w=w,
                      forest_config=forest_config, seed=seed)
    return result, actuals


def hybrid_model(params: CellParameters, ensemble: EnsembleModel) -> HybridModel:
    return HybridModel(params=params, ensemble=ensemble)


def evaluate_split(params: CellParameters, ensemble: EnsembleModel,
                   ds: Dataset, soc0: float = 1.0):
    return predict(HybridModel(params, ensemble), ds.I, ds.V, ds.dt, soc0=soc0)
