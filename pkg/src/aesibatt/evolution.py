"""Genetic search over library structure and regression hyperparameters."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ensemble import EnsembleConfig, EnsembleModel, build_ensemble_model
from .errors import ConfigError, InfeasibleSearchError
from .library import LibrarySpec, ScalingParams, build_theta

LAMBDA1_BOUNDS = (1e-13, 1e-1)
LAMBDA2_BOUNDS = (1e-2, 5.0)
D_BOUNDS = (1, 5)
PC_BOUNDS = (1, 5)
TAU_BOUNDS = (0.3, 0.7)


def pearson(a, b) -> float:
    """Sample Pearson correlation of two equal-length series."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ConfigError("pearson needs two equal-length series of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    va, vb = np.dot(da, da), np.dot(db, db)
    if va == 0 or vb == 0:
        raise ConfigError("pearson correlation undefined for zero-variance series")
    return float(np.dot(da, db) / math.sqrt(va * vb))


@dataclass
class Genome:
    mask: np.ndarray        # term inclusion over the candidate pool
    lambda1: float
    lambda2: float
    p_c: tuple
    d: int
    tau: float

    def clamp(self) -> "Genome":
        return replace(
            self,
            lambda1=float(np.clip(self.lambda1, *LAMBDA1_BOUNDS)),
            lambda2=float(np.clip(self.lambda2, *LAMBDA2_BOUNDS)),
            p_c=tuple(int(np.clip(p, *PC_BOUNDS)) for p in self.p_c),
            d=int(np.clip(self.d, *D_BOUNDS)),
            tau=float(np.clip(self.tau, *TAU_BOUNDS)),
        )

    def validate(self, degree_constraint: str = "per-term"):
        lo, hi = LAMBDA1_BOUNDS
        if not lo <= self.lambda1 <= hi:
            raise ConfigError(f"lambda1 {self.lambda1} outside [{lo}, {hi}]")
        lo, hi = LAMBDA2_BOUNDS
        if not lo <= self.lambda2 <= hi:
            raise ConfigError(f"lambda2 {self.lambda2} outside [{lo}, {hi}]")
        if not D_BOUNDS[0] <= self.d <= D_BOUNDS[1]:
            raise ConfigError(f"d {self.d} outside {D_BOUNDS}")
        if any(not PC_BOUNDS[0] <= p <= PC_BOUNDS[1] for p in self.p_c):
            raise ConfigError(f"p_c {self.p_c} outside {PC_BOUNDS}")
        if not TAU_BOUNDS[0] <= self.tau <= TAU_BOUNDS[1]:
            raise ConfigError(f"tau {self.tau} outside {TAU_BOUNDS}")
        if degree_constraint == "sum-pc" and sum(self.p_c) > self.d:
            raise ConfigError("sum of p_c exceeds d under the sum-pc reading")


def eligible_terms(pool: LibrarySpec, genome: Genome,
                   degree_constraint: str = "per-term") -> np.ndarray:
    """Pool terms admissible under the genome's degree genes.

    "per-term": each term's total degree <= d and per-channel order <= p_c
    (the reading used by default).  "sum-pc": additionally requires
    sum(p_c) <= d, the literal constraint text; validation then rejects
    genomes violating it and term filtering is as in "per-term".
    """
    ok = np.ones(len(pool.terms), dtype=bool)
    for j, term in enumerate(pool.terms):
        if term.kind in ("chebyshev", "cross"):
            if term.total_degree > genome.d:
                ok[j] = False
            elif any(deg > p for deg, p in zip(term.degrees, genome.p_c)):
                ok[j] = False
    return ok


def selected_columns(pool: LibrarySpec, genome: Genome,
                     degree_constraint: str = "per-term") -> np.ndarray:
    cols = np.flatnonzero(genome.mask & eligible_terms(pool, genome, degree_constraint))
    return cols


@dataclass
class FitnessReport:
    loss_oob: float
    loss_valid: float
    loss_sparse: float
    total_loss: float
    fitness: float
    rho_train: float
    rho_valid: float
    feasible: bool
    active_count: int = 0


@dataclass
class EvolutionConfig:
    population: int = 24
    generations: int = 50
    tournament: int = 3
    mutation_rate: float = 0.1
    elitism: int = 1
    gamma: tuple = (0.45, 0.45, 0.10)     # OOB, validation, sparsity weights
    eps_train: float = 0.5                # minimum Pearson correlations
    eps_valid: float = 0.5
    method: str = "bagging"
    degree_constraint: str = "per-term"
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    threads: int = 1
    mask_init_prob: float = 0.5


@dataclass
class SearchData:
    """Scaled feature matrices and targets for the GA."""

    X_train: np.ndarray      # (n, 6) scaled channels at step k
    y_train: np.ndarray      # scaled error at step k+1
    X_valid: np.ndarray
    y_valid: np.ndarray
    scaling: ScalingParams


def evaluate(genome: Genome, pool: LibrarySpec, data: SearchData,
             config: EvolutionConfig, seed: int,
             theta_train_full: np.ndarray | None = None,
             theta_valid_full: np.ndarray | None = None
             ) -> tuple[FitnessReport, EnsembleModel | None]:
    """Composite fitness of one genome: build Theta_s, fit the ensemble,
    aggregate, and score the gamma-weighted loss with correlation constraints."""
    genome.validate(config.degree_constraint)
    cols = selected_columns(pool, genome, config.degree_constraint)
    if cols.size == 0:
        report = FitnessReport(np.inf, np.inf, np.inf, np.inf, -np.inf,
                               0.0, 0.0, False)
        return report, None
    if theta_train_full is not None:
        th_train = theta_train_full[:, cols]
        th_valid = theta_valid_full[:, cols]
    else:
        th_train = build_theta(data.X_train, pool, columns=cols)
        th_valid = build_theta(data.X_valid, pool, columns=cols)

    sub_terms = tuple(pool.terms[j] for j in cols)
    sub_spec = LibrarySpec(sub_terms, pool.d, pool.p_c, pool.extras,
                           pool.phi_max_factors)
    model = build_ensemble_model(
        th_train, data.y_train, sub_spec, data.scaling,
        genome.lambda1, genome.lambda2, config.method, config.ensemble,
        seed, tau=genome.tau,
    )
    if model.active_count == 0:
        report = FitnessReport(np.inf, np.inf, 0.0, np.inf, -np.inf,
                               0.0, 0.0, False)
        return report, None

    loss_oob = float(np.mean(model.oob_scores))
    pred_train = th_train @ model.xi_ens
    pred_valid = th_valid @ model.xi_ens
    loss_valid = float(np.mean((data.y_valid - pred_valid) ** 2))
    loss_sparse = float(model.active_count)
    sparse_norm = loss_sparse / len(pool.terms)
    g1, g2, g3 = config.gamma
    total = g1 * loss_oob + g2 * loss_valid + g3 * sparse_norm
    try:
        rho_train = pearson(data.y_train, pred_train)
        rho_valid = pearson(data.y_valid, pred_valid)
    except ConfigError:
        rho_train = rho_valid = 0.0
    feasible = rho_train > config.eps_train and rho_valid > config.eps_valid
    fitness = 1.0 - total if feasible else -np.inf
    report = FitnessReport(
        loss_oob=loss_oob, loss_valid=loss_valid, loss_sparse=loss_sparse,
        total_loss=total, fitness=fitness, rho_train=rho_train,
        rho_valid=rho_valid, feasible=feasible,
        active_count=model.active_count,
    )
    return report, model


def _random_genome(pool: LibrarySpec, rng, config: EvolutionConfig) -> Genome:
    mask = rng.random(len(pool.terms)) < config.mask_init_prob
    if not mask.any():
        mask[rng.integers(len(pool.terms))] = True
    mask[0] = True  # keep the constant available
    # both penalties are scale parameters; sample them log-uniformly
    log_lo, log_hi = np.log10(LAMBDA1_BOUNDS[0]), np.log10(LAMBDA1_BOUNDS[1])
    log2_lo, log2_hi = np.log10(LAMBDA2_BOUNDS[0]), np.log10(LAMBDA2_BOUNDS[1])
    return Genome(
        mask=mask,
        lambda1=10.0 ** rng.uniform(log_lo, log_hi),
        lambda2=10.0 ** rng.uniform(log2_lo, log2_hi),
        p_c=tuple(int(rng.integers(PC_BOUNDS[0], PC_BOUNDS[1] + 1)) for _ in range(6)),
        d=int(rng.integers(D_BOUNDS[0], D_BOUNDS[1] + 1)),
        tau=rng.uniform(*TAU_BOUNDS),
    )


def _tournament(pop, fits, rng, k):
    idx = rng.integers(0, len(pop), size=k)
    best = max(idx, key=lambda i: (fits[i], -i))
    return pop[best]


def _crossover(a: Genome, b: Genome, rng) -> Genome:
    pick = rng.random(a.mask.size) < 0.5
    mask = np.where(pick, a.mask, b.mask)
    if not mask.any():
        mask[rng.integers(mask.size)] = True
    choose = lambda x, y: x if rng.random() < 0.5 else y
    return Genome(
        mask=mask,
        lambda1=choose(a.lambda1, b.lambda1),
        lambda2=choose(a.lambda2, b.lambda2),
        p_c=tuple(choose(pa, pb) for pa, pb in zip(a.p_c, b.p_c)),
        d=choose(a.d, b.d),
        tau=choose(a.tau, b.tau),
    )


def _mutate(g: Genome, rng, rate: float) -> Genome:
    mask = g.mask.copy()
    flips = rng.random(mask.size) < rate / 10.0  # bit flips sparser than gene moves
    mask ^= flips
    if not mask.any():
        mask[rng.integers(mask.size)] = True
    lam1 = g.lambda1
    if rng.random() < rate:
        lam1 = 10.0 ** (np.log10(lam1) + rng.normal(0.0, 1.0))
    lam2 = g.lambda2
    if rng.random() < rate:
        lam2 = 10.0 ** (np.log10(lam2) + rng.normal(0.0, 0.3))
    p_c = tuple(
        p + int(rng.integers(-1, 2)) if rng.random() < rate else p for p in g.p_c
    )
    d = g.d + int(rng.integers(-1, 2)) if rng.random() < rate else g.d
    tau = g.tau + rng.normal(0.0, 0.05) if rng.random() < rate else g.tau
    return Genome(mask, lam1, lam2, p_c, d, tau).clamp()


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_active_terms: int


def evolve(pool: LibrarySpec, data: SearchData, config: EvolutionConfig,
           seed: int) -> tuple[Genome, EnsembleModel, list[GenerationRecord]]:
    """Run the GA; returns the best feasible genome, its ensemble, history.

    Deterministic for a fixed seed regardless of thread count: genome
    evaluations derive their RNG streams from (seed, generation, index) and
    results are gathered in population order.
    """
    if config.population < 4:
        raise ConfigError("population must be at least 4")
    if config.generations < 1:
        raise ConfigError("generations must be at least 1")
    rng = np.random.default_rng([seed, 0xE0])
    n_train = data.X_train.shape[0]
    budget = 5e7
    precompute = len(pool.terms) * (n_train + data.X_valid.shape[0]) <= budget
    th_train_full = build_theta(data.X_train, pool) if precompute else None
    th_valid_full = build_theta(data.X_valid, pool) if precompute else None

    population = [_random_genome(pool, rng, config) for _ in range(config.population)]
    history: list[GenerationRecord] = []
    best: tuple[float, Genome, EnsembleModel | None, FitnessReport] | None = None
    best_any_report: FitnessReport | None = None

    def eval_one(args):
        gen, i, genome = args
        member_seed = int(np.random.default_rng([seed, gen, i]).integers(0, 2**31 - 1))
        return evaluate(genome, pool, data, config, member_seed,
                        th_train_full, th_valid_full)

    for gen in range(config.generations):
        jobs = [(gen, i, g) for i, g in enumerate(population)]
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as ex:
                results = list(ex.map(eval_one, jobs))
        else:
            results = [eval_one(j) for j in jobs]
        fits = [r[0].fitness for r in results]
        for i, (report, model) in enumerate(results):
            if best_any_report is None or report.total_loss < best_any_report.total_loss:
                best_any_report = report
            if report.feasible and (best is None or report.fitness > best[0]):
                best = (report.fitness, population[i], model, report)
        finite = [f for f in fits if np.isfinite(f)]
        best_fit = best[0] if best else -np.inf
        history.append(GenerationRecord(
            generation=gen,
            best_fitness=best_fit,
            mean_fitness=float(np.mean(finite)) if finite else -np.inf,
            best_active_terms=best[3].active_count if best else 0,
        ))
        if gen == config.generations - 1:
            break
        # next generation: elitism + tournament selection / crossover / mutation
        order = sorted(range(len(population)), key=lambda i: (-fits[i], i))
        next_pop = [population[order[j]] for j in range(config.elitism)]
        while len(next_pop) < config.population:
            pa = _tournament(population, fits, rng, config.tournament)
            pb = _tournament(population, fits, rng, config.tournament)
            child = _mutate(_crossover(pa, pb, rng), rng, config.mutation_rate)
            next_pop.append(child)
        population = next_pop

    if best is None:
        raise InfeasibleSearchError(best_any_report)
    return best[1], best[2], history


def history_to_csv(history: list[GenerationRecord], path):
    rows = ["generation,best_fitness,mean_fitness,best_active_terms"]
    for rec in history:
        rows.append(f"{rec.generation},{rec.best_fitness!r},{rec.mean_fitness!r},{rec.best_active_terms}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
