"""Dataset ingestion, splitting, and the synthetic ground-truth benchmark.

The benchmark stands in for proprietary experimental measurements: a "true"
cell (perturbed physical parameters plus an additive nonlinear voltage
distortion and measurement noise) is simulated on synthetic drive cycles,
and the nominal reference model then exhibits a structured, current-
dependent voltage error for the learning pipeline to capture.
"""

from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from .errors import ConfigError, DataError
from .espm import CellModel, CellParameters

TRUTH_SUFFIX = ".truth.json"


@dataclass
class Dataset:
    t: np.ndarray
    I: np.ndarray
    V: np.ndarray
    dt: float
    tag: str = "train"
    note: str = ""

    def __post_init__(self):
        for name in ("t", "I", "V"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in column {name}")
        if not (self.t.shape == self.I.shape == self.V.shape):
            raise DataError("columns t, I, V must have equal length")
        if self.t.size >= 2:
            steps = np.diff(self.t)
            bad = np.flatnonzero(np.abs(steps - self.dt) > 1e-9)
            if bad.size:
                raise DataError(
                    f"timestamps not uniform at dt={self.dt}: first offending row "
                    f"{int(bad[0]) + 2} (step {steps[bad[0]]:.6g} s)"
                )

    def __len__(self):
        return self.t.size

    def to_csv(self, path):
        data = np.column_stack([self.t, self.I, self.V])
        np.savetxt(path, data, delimiter=",", header="t,I,V", comments="")


def assert_not_truth_path(path):
    if str(path).endswith(TRUTH_SUFFIX):
        raise ConfigError(
            f"{path} is a hidden-truth record and may not feed training"
        )


def load_csv(path, expected_dt: float | None = None, tag: str = "train") -> Dataset:
    """Load a `t,I,V` csv with strict monotonicity and dt validation."""
    assert_not_truth_path(path)
    try:
        with open(path) as fh:
            header = fh.readline().strip()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if [c.strip() for c in header.split(",")] != ["t", "I", "V"]:
        raise DataError(f"{path}: expected header 't,I,V', got '{header}'")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != 3:
        raise DataError(f"{path}: expected 3 columns, found {arr.shape[1]}")
    t = arr[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 2
        raise DataError(f"{path}: timestamps not strictly increasing at line {row + 1}")
    dt = float(steps[0]) if t.size >= 2 else (expected_dt or 0.1)
    if expected_dt is not None and abs(dt - expected_dt) > 1e-9:
        raise DataError(f"{path}: dt {dt:.6g} does not match expected {expected_dt:.6g}")
    return Dataset(t=t, I=arr[:, 1], V=arr[:, 2], dt=dt, tag=tag, note=str(path))


def split(datasets: list[Dataset], assignment: dict) -> dict:
    """Partition datasets into {train, validation, test} collections.

    `assignment` maps split tags to lists of dataset indices; every input
    must be covered exactly once.
    """
    allowed = {"train", "validation", "test"}
    if set(assignment) - allowed:
        raise ConfigError(f"split tags must be within {sorted(allowed)}")
    seen = {}
    for tag, idxs in assignment.items():
        for i in idxs:
            if i in seen:
                raise ConfigError(f"dataset {i} assigned to both {seen[i]} and {tag}")
            seen[i] = tag
    if set(seen) != set(range(len(datasets))):
        missing = sorted(set(range(len(datasets))) - set(seen))
        raise ConfigError(f"datasets {missing} not assigned to any split")
    out = {tag: [] for tag in allowed}
    for tag, idxs in assignment.items():
        for i in idxs:
            out[tag].append(replace(datasets[i], tag=tag))
    for tag in allowed:
        if not out[tag]:
            warnings.warn(f"split '{tag}' is empty")
    return out


# ---------------------------------------------------------------------------
# synthetic drive cycles

CYCLE_KINDS = ("urban", "highway", "aggressive")


def make_drive_cycle(kind: str, n_samples: int, dt: float, c_rate_amps: float,
                     rng) -> np.ndarray:
    """Synthetic current profile with the qualitative character of its kind.

    Discharge-positive; urban = low-rate stop-and-go, highway = sustained
    moderate load, aggressive = high-rate transients.  No fidelity to any
    standard cycle is claimed.
    """
    if kind not in CYCLE_KINDS:
        raise ConfigError(f"unknown cycle kind '{kind}'")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    t = np.arange(n_samples) * dt
    n_waves = 6
    profile = np.zeros(n_samples)
    if kind == "urban":
        base, spread, period = 0.25, 0.5, 60.0
    elif kind == "highway":
        base, spread, period = 0.8, 0.35, 180.0
    else:
        base, spread, period = 1.0, 2.2, 45.0
    for _ in range(n_waves):
        freq = 2 * np.pi / (period * rng.uniform(0.4, 2.5))
        profile += rng.uniform(0.2, 1.0) * np.sin(freq * t + rng.uniform(0, 2 * np.pi))
    profile = base + spread * profile / n_waves * 3.0
    # occasional sharper pulses
    n_pulses = max(1, n_samples // 600)
    for _ in range(n_pulses):
        start = rng.integers(0, max(1, n_samples - 50))
        width = int(rng.integers(10, 50))
        profile[start:start + width] += rng.uniform(0.5, 1.5) * (1 if kind != "urban" else 0.5)
    if kind == "aggressive":
        profile = np.clip(profile, -1.5, 5.0)
    else:
        profile = np.clip(profile, -1.0, 2.5)
    return profile * c_rate_amps


def append_charge_pulse(current: np.ndarray, dt: float, c_rate_amps: float,
                        rate: float = 5.0) -> np.ndarray:
    """Charging pulse restoring the cycle's net discharged coulombs at `rate` C."""
    net = float(np.sum(current) * dt)
    if net <= 0:
        return current
    pulse_amps = rate * c_rate_amps
    n_pulse = int(np.ceil(net / (pulse_amps * dt)))
    return np.concatenate([current, np.full(n_pulse, -pulse_amps)])


# ---------------------------------------------------------------------------
# ground-truth generation


@dataclass
class TruthConfig:
    """Perturbed "true cell" plus an additive voltage distortion."""

    ds_n_factor: float = 1.3
    ds_p_factor: float = 0.75
    r_c_factor: float = 1.5
    k_n_factor: float = 0.8
    kappa_factor: float = 0.85
    distortion_tanh: float = 0.030     # [V] amplitude of tanh(I / i_ref)
    distortion_soc: float = 0.015      # [V] SOC-coupled current term
    distortion_lag: float = 0.97       # first-order memory on the distortion
    i_ref_c_rate: float = 2.0
    sigma_v: float = 2e-3              # measurement noise [V]
    seed: int = 0


@dataclass
class TruthRecord:
    config: dict
    perturbed: dict
    seed: int

    def save(self, path):
        path = str(path)
        if not path.endswith(TRUTH_SUFFIX):
            raise ConfigError(f"truth records must use the '{TRUTH_SUFFIX}' suffix")
        with open(path, "w") as fh:
            json.dump({"config": self.config, "perturbed": self.perturbed,
                       "seed": self.seed, "hidden_truth": True}, fh, sort_keys=True)


def perturbed_parameters(nominal: CellParameters, cfg: TruthConfig) -> CellParameters:
    return replace(
        nominal,
        D_s_n=nominal.D_s_n * cfg.ds_n_factor,
        D_s_p=nominal.D_s_p * cfg.ds_p_factor,
        R_c=nominal.R_c * cfg.r_c_factor,
        K_n=nominal.K_n * cfg.k_n_factor,
        kappa_eff=nominal.kappa_eff * cfg.kappa_factor,
    )


def distortion_series(currents: np.ndarray, socs: np.ndarray, cfg: TruthConfig,
                      c_rate_amps: float) -> np.ndarray:
    i_ref = cfg.i_ref_c_rate * c_rate_amps
    instant = (
        -cfg.distortion_tanh * np.tanh(currents / i_ref)
        - cfg.distortion_soc * (socs - 0.5) * (currents / i_ref)
    )
    out = np.empty_like(instant)
    a = cfg.distortion_lag
    state = instant[0]
    for k, v in enumerate(instant):
        state = a * state + (1 - a) * v
        out[k] = state
    return out


def generate_synthetic(nominal: CellParameters, current: np.ndarray, dt: float,
                       cfg: TruthConfig, tag: str = "train", soc0: float = 1.0,
                       ) -> tuple[Dataset, TruthRecord]:
    """Simulate the perturbed true cell and emit a measured dataset.

    The hidden truth record (distortion spec plus perturbation factors) is
    returned separately and must never feed the training paths.
    """
    true_params = perturbed_parameters(nominal, cfg)
    model = CellModel(true_params)
    sim = model.simulate(current, dt, soc0=soc0)
    c_rate_amps = nominal.capacity_coulombs / 3600.0
    rng = np.random.default_rng([cfg.seed, zlib.crc32(tag.encode())])
    v = (
        sim.V
        + distortion_series(sim.I, sim.soc, cfg, c_rate_amps)
        + rng.normal(0.0, cfg.sigma_v, size=sim.V.size)
    )
    ds = Dataset(t=sim.t, I=sim.I, V=v, dt=dt, tag=tag, note="synthetic")
    record = TruthRecord(config=asdict(cfg),
                         perturbed={"D_s_n": true_params.D_s_n,
                                    "D_s_p": true_params.D_s_p,
                                    "R_c": true_params.R_c,
                                    "K_n": true_params.K_n,
                                    "kappa_eff": true_params.kappa_eff},
                         seed=cfg.seed)
    return ds, record


@dataclass
class Benchmark:
    train: Dataset
    validation: Dataset
    test: list
    truth: TruthRecord
    dt: float
    soc0: float


def make_benchmark(seed: int = 0, dt: float = 0.1, cycle_samples: int = 20000,
                   nominal: CellParameters | None = None,
                   truth_config: TruthConfig | None = None) -> Benchmark:
    """Seeded benchmark mirroring the experimental layout: four mixed
    training cycles, one validation cycle, three test cycles, each followed
    by a high-rate charging pulse."""
    nominal = nominal or CellParameters.reference()
    cfg = truth_config or TruthConfig(seed=seed)
    cfg = replace(cfg, seed=seed)
    c_amps = nominal.capacity_coulombs / 3600.0
    rng = np.random.default_rng([seed, 0xDA7A])

    def cycle(kind):
        cur = make_drive_cycle(kind, cycle_samples, dt, c_amps, rng)
        return append_charge_pulse(cur, dt, c_amps)

    train_current = np.concatenate([
        cycle("urban"), cycle("highway"), cycle("aggressive"), cycle("urban"),
    ])
    valid_current = cycle("urban")
    test_currents = [cycle("highway"), cycle("aggressive"), cycle("urban")]

    train, truth = generate_synthetic(nominal, train_current, dt, cfg, tag="train")
    valid, _ = generate_synthetic(nominal, valid_current, dt, cfg, tag="validation")
    tests = [
        generate_synthetic(nominal, cur, dt, cfg, tag=f"test_{i}")[0]
        for i, cur in enumerate(test_currents)
    ]
    return Benchmark(train=train, validation=valid, test=tests, truth=truth,
                     dt=dt, soc0=1.0)
