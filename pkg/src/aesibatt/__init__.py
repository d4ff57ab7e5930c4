"""Hybrid reduced-order battery modeling with ensemble sparse identification
and sequential conformal prediction intervals."""

from .conformal import (ForestConfig, PredictionInterval, QuantileForest,
                        coverage_and_width, spci_run)
from .data import Benchmark, Dataset, TruthConfig, load_csv, make_benchmark, split
from .ensemble import (BootstrapSample, EnsembleConfig, EnsembleModel, bag,
                       build_ensemble_model, expected_unique_coverage,
                       fit_ensemble, mbb_resample, stability_select)
from .espm import (CellModel, CellParameters, CellState, VoltageBreakdown,
                   exchange_current, overpotential)
from .evolution import (EvolutionConfig, FitnessReport, Genome, SearchData,
                        evaluate, evolve, pearson)
from .hybrid import HybridModel, error_map, mser, predict
from .importance import ImportanceReport, svd_rank
from .library import (LibrarySpec, ScalingParams, TermDescriptor, build_theta,
                      chebyshev, enumerate_candidates, paper_sized_pool)
from .stridge import SparseModel, ridge_solve, stridge

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
