"""Batch command-line front end for the hybrid battery-modeling pipeline.

Subcommands
-----------
simulate   physics rollout of a current profile -> trace CSV
synth      generate the seeded synthetic benchmark datasets
train      evolutionary hyperparameter search + ensemble fit -> model JSON
evaluate   hybrid-vs-physics metrics and (I, SOC) error maps
intervals  sequential conformal prediction intervals on a test split
rank       SVD importance ranking of the active model terms

All commands read a TOML run configuration (``--config``) and honor
``--seed``, ``--threads`` and ``--out-dir`` overrides.  Exit codes:
0 success, 2 configuration/IO problem, 3 infeasible search, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as tomli
else:
    import tomli

from .conformal import ForestConfig
from .data import (Dataset, TruthConfig, assert_not_truth_path, load_csv,
                   make_benchmark)
from .ensemble import EnsembleConfig, EnsembleModel
from .errors import (AesibattError, ConfigError, DataError,
                     InfeasibleSearchError, NumericError, SaturationError)
from .espm import CellModel, CellParameters
from .evolution import EvolutionConfig, evolve, history_to_csv
from .hybrid import (HybridModel, error_map, error_map_to_csv, predict,
                     scaled_channels)
from .importance import svd_rank
from .library import LibrarySpec, build_theta, enumerate_candidates
from .pipeline import prepare_split, run_intervals, search_data

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


@dataclass
class RunConfig:
    """Validated run configuration assembled from TOML plus CLI overrides."""

    seed: int | None
    out_dir: str
    threads: int
    params: CellParameters
    dt: float
    soc0: float
    data: dict = field(default_factory=dict)     # split tag -> list of csv paths
    library: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    conformal: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, args) -> "RunConfig":
        raw = {}
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    raw = tomli.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"malformed TOML in {path}: {exc}") from exc

        espm_tbl = raw.get("espm", {})
        params_path = espm_tbl.get("params")
        if params_path is not None:
            params = CellParameters.from_toml(params_path)
        else:
            params = CellParameters.reference()

        seed = args.seed if args.seed is not None else raw.get("seed")
        out_dir = args.out_dir or raw.get("out_dir", ".")
        threads = args.threads or int(raw.get("threads", 1))

        data = {}
        for tag, paths in raw.get("data", {}).items():
            if isinstance(paths, str):
                paths = [paths]
            for p in paths:
                assert_not_truth_path(p)
                if not os.path.exists(p):
                    raise ConfigError(f"dataset file not found: {p}")
            data[tag] = list(paths)

        ens_tbl = raw.get("ensemble", {})
        ensemble = EnsembleConfig(
            n_boot=int(ens_tbl.get("n_boot", 100)),
            top_fraction=float(ens_tbl.get("top_fraction", 0.1)),
            block_size=int(ens_tbl.get("block_size", 500)),
            max_iters=int(ens_tbl.get("max_iters", 20)),
        )
        return cls(
            seed=None if seed is None else int(seed),
            out_dir=str(out_dir),
            threads=int(threads),
            params=params,
            dt=float(espm_tbl.get("dt", 0.1)),
            soc0=float(espm_tbl.get("soc0", 1.0)),
            data=data,
            library=raw.get("library", {}),
            search=raw.get("search", {}),
            ensemble=ensemble,
            conformal=raw.get("conformal", {}),
            synth=raw.get("synth", {}),
            simulate=raw.get("simulate", {}),
            raw=raw,
        )

    def out_path(self, name: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, name)

    def library_pool(self) -> LibrarySpec:
        lib = self.library
        return enumerate_candidates(
            d=int(lib.get("d", 5)),
            p_c=tuple(lib.get("p_c", (4, 5, 5, 5, 5, 5))),
            extras=tuple(lib.get("extras", ("sin", "cos", "tanh", "sinh",
                                            "cosh", "sech"))),
            phi_max_factors=int(lib.get("phi_max_factors", 3)),
        )

    def forest_config(self) -> ForestConfig:
        c = self.conformal
        return ForestConfig(
            n_trees=int(c.get("n_trees", 25)),
            min_leaf=int(c.get("min_leaf", 5)),
            max_depth=int(c.get("max_depth", 12)),
            max_features=c.get("max_features", "sqrt"),
            refit_every=int(c.get("refit_every", 100)),
        )

    def datasets(self, tag: str) -> list[Dataset]:
        paths = self.data.get(tag)
        if not paths:
            raise ConfigError(f"no '{tag}' datasets configured under [data]")
        return [load_csv(p, expected_dt=self.dt, tag=tag) for p in paths]


def _concat(datasets: list[Dataset], tag: str) -> Dataset:
    if len(datasets) == 1:
        return datasets[0]
    I = np.concatenate([d.I for d in datasets])
    V = np.concatenate([d.V for d in datasets])
    dt = datasets[0].dt
    return Dataset(t=np.arange(I.size) * dt + dt, I=I, V=V, dt=dt, tag=tag)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, args) -> int:
    profile_path = args.input or cfg.simulate.get("input")
    if profile_path is None:
        raise ConfigError("simulate needs an input csv (--input or [simulate] input)")
    assert_not_truth_path(profile_path)
    try:
        with open(profile_path) as fh:
            header = [c.strip() for c in fh.readline().strip().split(",")]
    except OSError as exc:
        raise ConfigError(f"cannot read {profile_path}: {exc}") from exc
    if header[:2] != ["t", "I"]:
        raise DataError(f"{profile_path}: expected columns starting 't,I'")
    arr = np.loadtxt(profile_path, delimiter=",", skiprows=1, ndmin=2)
    model = CellModel(cfg.params)
    sim = model.simulate(arr[:, 1], cfg.dt, soc0=cfg.soc0)
    out = cfg.out_path(args.output)
    sim.to_csv(out)
    print(f"wrote {out} ({sim.t.size} rows)")
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args) -> int:
    if cfg.seed is None:
        raise ConfigError("synth requires a seed (--seed or config)")
    s = cfg.synth
    truth_cfg = TruthConfig(
        sigma_v=float(s.get("sigma_v", TruthConfig.sigma_v)),
        seed=cfg.seed,
    )
    bench = make_benchmark(
        seed=cfg.seed,
        dt=float(s.get("dt", cfg.dt)),
        cycle_samples=int(s.get("cycle_samples", 20000)),
        nominal=cfg.params,
        truth_config=truth_cfg,
    )
    written = []
    for name, ds in [("train", bench.train), ("validation", bench.validation)] + [
        (f"test_{i}", d) for i, d in enumerate(bench.test)
    ]:
        path = cfg.out_path(f"{name}.csv")
        ds.to_csv(path)
        written.append(path)
    truth_path = cfg.out_path("benchmark.truth.json")
    bench.truth.save(truth_path)
    print("wrote " + ", ".join(written) + f"; hidden truth in {truth_path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    if cfg.seed is None:
        raise ConfigError("train requires a seed (--seed or config)")
    train = _concat(cfg.datasets("train"), "train")
    valid = _concat(cfg.datasets("validation"), "validation")
    train_p = prepare_split(cfg.params, train, soc0=cfg.soc0)
    valid_p = prepare_split(cfg.params, valid, soc0=cfg.soc0)
    data = search_data(train_p, valid_p)
    pool = cfg.library_pool()

    s = cfg.search
    evo = EvolutionConfig(
        population=int(s.get("population", 24)),
        generations=int(s.get("generations", 50)),
        tournament=int(s.get("tournament", 3)),
        mutation_rate=float(s.get("mutation_rate", 0.1)),
        elitism=int(s.get("elitism", 1)),
        gamma=tuple(s.get("gamma", (0.45, 0.45, 0.10))),
        eps_train=float(s.get("eps_train", 0.5)),
        eps_valid=float(s.get("eps_valid", 0.5)),
        method=s.get("method", "bagging"),
        degree_constraint=s.get("degree_constraint", "per-term"),
        ensemble=cfg.ensemble,
        threads=cfg.threads,
        mask_init_prob=float(s.get("mask_init_prob", 0.5)),
    )
    genome, model, history = evolve(pool, data, evo, cfg.seed)

    model_path = cfg.out_path(args.model)
    with open(model_path, "w") as fh:
        fh.write(model.to_json())
    history_to_csv(history, cfg.out_path("history.csv"))
    hp = {
        "lambda1": genome.lambda1, "lambda2": genome.lambda2,
        "p_c": list(genome.p_c), "d": genome.d, "tau": genome.tau,
        "method": evo.method, "active_terms": model.active_count,
        "pool_size": len(pool.terms),
    }
    with open(cfg.out_path("hyperparameters.json"), "w") as fh:
        json.dump(hp, fh, sort_keys=True, indent=1)
    print(f"wrote {model_path} (method={evo.method}, "
          f"{model.active_count} active terms)")
    return EXIT_OK


def _load_model(path: str) -> EnsembleModel:
    try:
        with open(path) as fh:
            return EnsembleModel.from_json(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed model JSON {path}: {exc}") from exc


def cmd_evaluate(cfg: RunConfig, args) -> int:
    model = _load_model(args.model)
    hybrid = HybridModel(cfg.params, model)
    per_split = {}
    cap_amps = cfg.params.capacity_coulombs / 3600.0
    for tag in ("train", "validation", "test"):
        if tag not in cfg.data:
            continue
        split_stats = []
        for i, ds in enumerate(cfg.datasets(tag)):
            pred = predict(hybrid, ds.I, ds.V, ds.dt, soc0=cfg.soc0)
            mse_espm = float(np.mean(pred.e_measured ** 2))
            mse_h = float(np.mean((ds.V - pred.v_hybrid) ** 2))
            split_stats.append({
                "mse_espm": mse_espm, "mse_hybrid": mse_h,
                "mser": 100.0 * (mse_espm - mse_h) / mse_espm,
            })
            i_bins = np.linspace(-5 * cap_amps, 5 * cap_amps, 11)
            soc_bins = np.linspace(0.0, 1.0, 11)
            grid = error_map(pred.sim.I, pred.sim.soc, pred.e_measured,
                             i_bins, soc_bins, signed=False)
            error_map_to_csv(grid, i_bins, soc_bins,
                             cfg.out_path(f"error_map_{tag}_{i}.csv"))
        per_split[tag] = split_stats
    report_path = cfg.out_path("evaluation.json")
    with open(report_path, "w") as fh:
        json.dump(per_split, fh, sort_keys=True, indent=1)
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_intervals(cfg: RunConfig, args) -> int:
    model = _load_model(args.model)
    calib = [prepare_split(cfg.params, d, soc0=cfg.soc0)
             for d in cfg.datasets("train") + cfg.datasets("validation")]
    tests = cfg.datasets("test")
    alpha = float(cfg.conformal.get("alpha", 0.1))
    w = int(cfg.conformal.get("w", 200))
    seed = cfg.seed if cfg.seed is not None else 0
    for i, ds in enumerate(tests):
        test_p = prepare_split(cfg.params, ds, soc0=cfg.soc0)
        result, actuals = run_intervals(
            model, cfg.params, calib, test_p, alpha=alpha, w=w,
            forest_config=cfg.forest_config(), seed=seed,
        )
        result.to_csv(cfg.out_path(f"intervals_test_{i}.csv"), actuals)
        with open(cfg.out_path(f"intervals_test_{i}_metrics.json"), "w") as fh:
            fh.write(result.metrics_json())
        print(f"test_{i}: coverage {result.coverage:.4f}, "
              f"mean width {result.mean_width:.3e} V")
    return EXIT_OK


def cmd_rank(cfg: RunConfig, args) -> int:
    model = _load_model(args.model)
    ds = _concat(cfg.datasets("train"), "train")
    train_p = prepare_split(cfg.params, ds, soc0=cfg.soc0)
    # ranking needs the scaled feature matrix restricted to active columns
    Xs = scaled_channels(train_p.sim, train_p.e, model.scaling)[:-1]
    active = np.flatnonzero(model.xi_ens)
    # the intercept carries no ranking information
    active = np.array([j for j in active
                       if model.spec.terms[j].kind != "constant"], dtype=int)
    if active.size == 0:
        raise ConfigError("model has no non-constant active terms to rank")
    theta_active = build_theta(Xs, model.spec, columns=active)
    report = svd_rank(theta_active, model.xi_ens[active],
                      [model.spec.terms[j].name for j in active])
    out = cfg.out_path(args.output)
    report.to_csv(out)
    print(f"wrote {out} ({active.size} ranked terms)")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aesibatt",
        description="Hybrid physics + sparse-identification battery voltage "
                    "modeling with conformal prediction intervals.",
    )
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    parser.add_argument("--threads", type=int, help="worker thread cap")
    parser.add_argument("--out-dir", help="output directory (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="physics rollout -> trace CSV")
    p.add_argument("--input", help="current profile csv (t,I[,V])")
    p.add_argument("--output", default="trace.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="evolutionary search + ensemble fit")
    p.add_argument("--model", default="model.json", help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="hybrid metrics and error maps")
    p.add_argument("model", help="model JSON from train")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("intervals", help="conformal intervals on test splits")
    p.add_argument("model", help="model JSON from train")
    p.set_defaults(func=cmd_intervals)

    p = sub.add_parser("rank", help="SVD importance ranking of model terms")
    p.add_argument("model", help="model JSON from train")
    p.add_argument("--output", default="importance.csv")
    p.set_defaults(func=cmd_rank)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args)
        return args.func(cfg, args)
    except InfeasibleSearchError as exc:
        print(f"error: search infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericError, SaturationError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
