"""Reduced-order electrochemical cell model (extended single particle model).

Solid diffusion is discretized with a conservative finite-volume scheme in
the particle radius, electrolyte diffusion with finite volumes across the
anode / separator / cathode stack, both advanced by implicit Euler.  The
algebraic voltage chain (open-circuit potentials, kinetic overpotentials,
electrolyte potential drop, ohmic drop) is evaluated explicitly from the
updated state.

Sign convention: applied current I is positive on discharge.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import ConfigError, DataError, NumericError, SaturationError

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

F_CONST = 96485.33212
R_GAS = 8.314462618


class OCPTable:
    """Tabulated open-circuit potential U(stoichiometry) on [0, 1]."""

    def __init__(self, stoich, volts):
        stoich = np.asarray(stoich, dtype=float)
        volts = np.asarray(volts, dtype=float)
        if stoich.ndim != 1 or stoich.shape != volts.shape or stoich.size < 2:
            raise ConfigError("OCP table needs two equal-length 1-D columns")
        if not np.all(np.diff(stoich) > 0):
            raise ConfigError("OCP stoichiometry grid must be strictly increasing")
        if stoich[0] > 0.0 or stoich[-1] < 1.0:
            raise ConfigError("OCP table must cover stoichiometry [0, 1]")
        if not (np.all(np.isfinite(stoich)) and np.all(np.isfinite(volts))):
            raise ConfigError("OCP table contains non-finite entries")
        self.stoich = stoich
        self.volts = volts

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < self.stoich[0]) or np.any(theta > self.stoich[-1]):
            raise DataError(
                f"stoichiometry {float(np.min(theta)):.4g}..{float(np.max(theta)):.4g} "
                f"outside OCP table domain [{self.stoich[0]:.4g}, {self.stoich[-1]:.4g}]"
            )
        return np.interp(theta, self.stoich, self.volts)

    @classmethod
    def from_csv(cls, path):
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if arr.shape[1] != 2:
            raise ConfigError(f"OCP csv {path} must have two columns")
        return cls(arr[:, 0], arr[:, 1])


def default_ocp_anode(n_points: int = 201) -> OCPTable:
    """Smooth synthetic graphite-like curve, ~1.2 V down to ~0.05 V."""
    x = np.linspace(0.0, 1.0, n_points)
    v = 0.05 + 1.15 * np.exp(-8.0 * x)
    return OCPTable(x, v)


def default_ocp_cathode(n_points: int = 201) -> OCPTable:
    """Smooth synthetic NMC-like curve, ~4.3 V down to ~3.4 V."""
    x = np.linspace(0.0, 1.0, n_points)
    v = 4.3 - 0.55 * x - 0.35 * x**2
    return OCPTable(x, v)


@dataclass(frozen=True)
class CellParameters:
    """Physical constants and discretization of the reference cell."""

    D_s_n: float
    D_s_p: float
    R_p_n: float
    R_p_p: float
    eps_e_n: float
    eps_e_s: float
    eps_e_p: float
    D_e_n: float
    D_e_s: float
    D_e_p: float
    a_n: float
    a_p: float
    t_plus: float
    T: float
    alpha: float
    K_n: float
    K_p: float
    c_s_max_n: float
    c_s_max_p: float
    c_e_init: float
    kappa_eff: float
    kappa_D_eff: float
    R_c: float
    L_n: float
    L_s: float
    L_p: float
    A_cell: float
    stoich_n_0: float
    stoich_n_100: float
    stoich_p_0: float
    stoich_p_100: float
    ocp_n: OCPTable = field(repr=False)
    ocp_p: OCPTable = field(repr=False)
    N_r: int = 30
    N_x: int = 30
    F: float = F_CONST
    Rgas: float = R_GAS

    def __post_init__(self):
        positive = (
            "D_s_n D_s_p R_p_n R_p_p eps_e_n eps_e_s eps_e_p D_e_n D_e_s "
            "D_e_p a_n a_p T K_n K_p c_s_max_n c_s_max_p c_e_init kappa_eff "
            "kappa_D_eff L_n L_s L_p A_cell F Rgas"
        ).split()
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"parameter {name} must be strictly positive")
        if self.R_c < 0:
            raise ConfigError("R_c must be non-negative")
        if not 0 < self.t_plus < 1:
            raise ConfigError("t_plus must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.N_r < 3 or self.N_x < 3:
            raise ConfigError("N_r and N_x must each be at least 3")
        if not 0 <= self.stoich_n_0 < self.stoich_n_100 <= 1:
            raise ConfigError("anode reference stoichiometries must satisfy 0 <= s0 < s100 <= 1")
        if not 0 <= self.stoich_p_100 < self.stoich_p_0 <= 1:
            raise ConfigError("cathode reference stoichiometries must satisfy 0 <= s100 < s0 <= 1")

    @classmethod
    def reference(cls, N_r: int = 30, N_x: int = 30) -> "CellParameters":
        """Synthetic NMC-like reference cell (literature-typical values).

        Deliberately not fit to any specific commercial cell; nominal
        capacity works out to roughly 28 Ah over the anode stoichiometry
        window.
        """
        return cls(
            D_s_n=3.0e-14,
            D_s_p=8.0e-14,
            R_p_n=5.0e-6,
            R_p_p=5.0e-6,
            eps_e_n=0.30,
            eps_e_s=0.40,
            eps_e_p=0.30,
            D_e_n=4.1e-11,
            D_e_s=6.3e-11,
            D_e_p=4.1e-11,
            a_n=3.6e5,
            a_p=3.3e5,
            t_plus=0.38,
            T=298.15,
            alpha=0.5,
            K_n=6.0e-11,
            K_p=6.0e-11,
            c_s_max_n=31000.0,
            c_s_max_p=51000.0,
            c_e_init=1000.0,
            kappa_eff=0.5,
            kappa_D_eff=0.016,
            R_c=0.002,
            L_n=70e-6,
            L_s=25e-6,
            L_p=60e-6,
            A_cell=1.0,
            stoich_n_0=0.05,
            stoich_n_100=0.85,
            stoich_p_0=0.967,
            stoich_p_100=0.35,
            ocp_n=default_ocp_anode(),
            ocp_p=default_ocp_cathode(),
            N_r=N_r,
            N_x=N_x,
        )

    @classmethod
    def from_toml(cls, path) -> "CellParameters":
        """Load parameters from a TOML file.

        The [cell] table overrides reference values field by field.  OCP
        curves may be given as csv paths (keys ocp_n_csv / ocp_p_csv,
        two columns: stoichiometry, volts).
        """
        try:
            with open(path, "rb") as fh:
                raw = _toml.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read parameter file {path}: {exc}") from exc
        cell = raw.get("cell", raw)
        ref = cls.reference()
        kwargs = {}
        for key, value in cell.items():
            if key == "ocp_n_csv":
                kwargs["ocp_n"] = OCPTable.from_csv(value)
            elif key == "ocp_p_csv":
                kwargs["ocp_p"] = OCPTable.from_csv(value)
            elif hasattr(ref, key):
                kwargs[key] = type(getattr(ref, key))(value) if key in ("N_r", "N_x") else float(value)
            else:
                raise ConfigError(f"unknown cell parameter '{key}' in {path}")
        return replace(ref, **kwargs)

    @property
    def capacity_coulombs(self) -> float:
        """Charge moved over the anode stoichiometry window [C]."""
        eps_s_n = self.a_n * self.R_p_n / 3.0
        return (
            self.F * self.c_s_max_n * eps_s_n * self.L_n * self.A_cell
            * (self.stoich_n_100 - self.stoich_n_0)
        )


@dataclass
class CellState:
    """Discretized concentration state (finite-volume cell averages)."""

    c_s_n: np.ndarray
    c_s_p: np.ndarray
    c_e: np.ndarray
    soc: float

    def copy(self) -> "CellState":
        return CellState(self.c_s_n.copy(), self.c_s_p.copy(), self.c_e.copy(), self.soc)


@dataclass(frozen=True)
class VoltageBreakdown:
    U_p: float
    U_n: float
    eta_p: float
    eta_n: float
    phi_e_drop: float
    iR: float
    V: float


def overpotential(J: float, i0: float, params: CellParameters) -> float:
    """Kinetic overpotential (RT / alpha F) * asinh(J / 2 i0)."""
    if i0 <= 0:
        raise NumericError(f"exchange current density must be positive, got {i0}")
    return params.Rgas * params.T / (params.alpha * params.F) * np.arcsinh(J / (2.0 * i0))


def exchange_current(c_surf: float, c_s_max: float, c_e_avg: float, K: float,
                     F: float = F_CONST) -> float:
    """Exchange current density F*K*sqrt(c_surf (c_max - c_surf) c_e)."""
    if not 0 <= c_surf <= c_s_max:
        raise NumericError(f"surface concentration {c_surf} outside [0, {c_s_max}]")
    if c_e_avg <= 0:
        raise NumericError("mean electrolyte concentration must be positive")
    return F * K * np.sqrt(c_surf * (c_s_max - c_surf) * c_e_avg)


class _ParticleGrid:
    """Spherical finite-volume grid with a prefactored implicit-Euler solve."""

    def __init__(self, radius, diffusivity, n_cells, dt):
        self.n = n_cells
        dr = radius / n_cells
        faces = np.arange(n_cells + 1) * dr
        # shell volumes / face areas with the common 4*pi factor dropped
        self.vol = (faces[1:] ** 3 - faces[:-1] ** 3) / 3.0
        area = faces**2
        coeff = diffusivity * area[1:-1] / dr  # interior faces
        A = np.zeros((n_cells, n_cells))
        for j in range(n_cells - 1):
            A[j, j] -= coeff[j]
            A[j, j + 1] += coeff[j]
            A[j + 1, j + 1] -= coeff[j]
            A[j + 1, j] += coeff[j]
        M = np.diag(self.vol / dt)
        self.lu = lu_factor(M - A)
        self.dt = dt
        self.surface_area = area[-1]
        self.dr = dr
        self.diffusivity = diffusivity

    def step(self, c, molar_flux_out):
        """Advance one implicit Euler step; flux in mol/(m^2 s), outward positive."""
        rhs = self.vol / self.dt * c
        rhs[-1] -= self.surface_area * molar_flux_out
        return lu_solve(self.lu, rhs)

    def surface_concentration(self, c, molar_flux_out):
        # half-cell gradient extrapolation; dc/dr at R = -flux/D
        return c[-1] - 0.5 * self.dr * molar_flux_out / self.diffusivity


class _ElectrolyteGrid:
    """Finite-volume anode/separator/cathode stack, implicit Euler."""

    def __init__(self, params: CellParameters, dt: float):
        p = params
        n = p.N_x
        self.n_total = 3 * n
        widths = np.concatenate([
            np.full(n, p.L_n / n), np.full(n, p.L_s / n), np.full(n, p.L_p / n),
        ])
        eps = np.concatenate([
            np.full(n, p.eps_e_n), np.full(n, p.eps_e_s), np.full(n, p.eps_e_p),
        ])
        diff = np.concatenate([
            np.full(n, p.D_e_n), np.full(n, p.D_e_s), np.full(n, p.D_e_p),
        ])
        # face conductances (series composition of half-cell resistances)
        g = np.empty(self.n_total - 1)
        for i in range(self.n_total - 1):
            g[i] = 1.0 / (widths[i] / (2 * diff[i]) + widths[i + 1] / (2 * diff[i + 1]))
        A = np.zeros((self.n_total, self.n_total))
        for i in range(self.n_total - 1):
            A[i, i] -= g[i]
            A[i, i + 1] += g[i]
            A[i + 1, i + 1] -= g[i]
            A[i + 1, i] += g[i]
        self.cap = eps * widths  # per-cell capacity eps*dx
        self.lu = lu_factor(np.diag(self.cap / dt) - A)
        self.dt = dt
        self.widths = widths
        self.eps = eps
        self.centers = np.cumsum(widths) - widths / 2.0
        self.L_total = p.L_n + p.L_s + p.L_p
        # per-cell volumetric source per unit applied current [mol/(m^2 s A)] * dx
        src = np.zeros(self.n_total)
        src[:n] = (1 - p.t_plus) / (p.L_n * p.A_cell * p.F) * widths[:n]
        src[2 * n:] = -(1 - p.t_plus) / (p.L_p * p.A_cell * p.F) * widths[2 * n:]
        self.src_per_amp = src

    def step(self, c_e, current):
        rhs = self.cap / self.dt * c_e + self.src_per_amp * current
        return lu_solve(self.lu, rhs)


class CellModel:
    """Immutable forward model; safe to share across threads once built."""

    def __init__(self, params: CellParameters):
        self.params = params
        self._grids = {}

    def _discretization(self, dt):
        key = float(dt)
        if key not in self._grids:
            p = self.params
            self._grids[key] = (
                _ParticleGrid(p.R_p_n, p.D_s_n, p.N_r, dt),
                _ParticleGrid(p.R_p_p, p.D_s_p, p.N_r, dt),
                _ElectrolyteGrid(p, dt),
            )
        return self._grids[key]

    def initial_state(self, soc: float) -> CellState:
        if not 0 <= soc <= 1:
            raise ConfigError("initial SOC must lie in [0, 1]")
        p = self.params
        th_n = p.stoich_n_0 + soc * (p.stoich_n_100 - p.stoich_n_0)
        th_p = p.stoich_p_0 + soc * (p.stoich_p_100 - p.stoich_p_0)
        return CellState(
            c_s_n=np.full(p.N_r, th_n * p.c_s_max_n),
            c_s_p=np.full(p.N_r, th_p * p.c_s_max_p),
            c_e=np.full(3 * p.N_x, p.c_e_init),
            soc=soc,
        )

    def _mass_fluxes(self, current):
        """Outward molar surface fluxes (anode, cathode) [mol/(m^2 s)]."""
        p = self.params
        j_n = current / (p.a_n * p.L_n * p.A_cell)   # anode deintercalates on discharge
        j_p = -current / (p.a_p * p.L_p * p.A_cell)
        return j_n / p.F, j_p / p.F

    def soc_of(self, c_s_n: np.ndarray, grid_n: _ParticleGrid) -> float:
        p = self.params
        mean_theta = float(np.dot(c_s_n, grid_n.vol) / grid_n.vol.sum() / p.c_s_max_n)
        return (mean_theta - p.stoich_n_0) / (p.stoich_n_100 - p.stoich_n_0)

    def step(self, state: CellState, current: float, dt: float) -> CellState:
        if dt <= 0:
            raise ConfigError("dt must be positive")
        grid_n, grid_p, grid_e = self._discretization(dt)
        flux_n, flux_p = self._mass_fluxes(current)
        c_s_n = grid_n.step(state.c_s_n, flux_n)
        c_s_p = grid_p.step(state.c_s_p, flux_p)
        c_e = grid_e.step(state.c_e, current)
        p = self.params
        for name, c, c_max in (("anode", c_s_n, p.c_s_max_n), ("cathode", c_s_p, p.c_s_max_p)):
            lo, hi = float(c.min()), float(c.max())
            tol = 1e-9 * c_max
            if lo < -tol or hi > c_max + tol:
                raise SaturationError(name, lo if lo < -tol else hi, c_max)
            np.clip(c, 0.0, c_max, out=c)
        if float(c_e.min()) <= 0:
            raise NumericError("electrolyte concentration became non-positive")
        return CellState(c_s_n, c_s_p, c_e, self.soc_of(c_s_n, grid_n))

    def electrolyte_potential_drop(self, state: CellState, current: float,
                                   dt_hint: float = 0.1) -> float:
        """phi_e(0) - phi_e(L) from the trapezoidal ionic-current profile."""
        if np.any(state.c_e <= 0):
            raise NumericError("electrolyte concentration must be positive")
        p = self.params
        grid_e = self._discretization(dt_hint)[2]
        x = np.concatenate([[0.0], grid_e.centers, [grid_e.L_total]])
        # linear ramp in electrodes, constant in separator
        i_e = np.interp(
            x, [0.0, p.L_n, p.L_n + p.L_s, grid_e.L_total],
            [0.0, current / p.A_cell, current / p.A_cell, 0.0],
        )
        ohmic = float(np.trapezoid(i_e / p.kappa_eff, x))
        c = state.c_e
        c0 = c[0] + (c[0] - c[1]) * grid_e.widths[0] / (grid_e.centers[1] - grid_e.centers[0]) / 2
        cL = c[-1] + (c[-1] - c[-2]) * grid_e.widths[-1] / (grid_e.centers[-1] - grid_e.centers[-2]) / 2
        diffusional = (p.kappa_D_eff / p.kappa_eff) * (np.log(cL) - np.log(c0))
        return ohmic - diffusional

    def terminal_voltage(self, state: CellState, current: float) -> VoltageBreakdown:
        p = self.params
        grid_n, grid_p, _ = self._discretization(0.1)
        flux_n, flux_p = self._mass_fluxes(current)
        cs_n = grid_n.surface_concentration(state.c_s_n, flux_n)
        cs_p = grid_p.surface_concentration(state.c_s_p, flux_p)
        cs_n = min(max(cs_n, 0.0), p.c_s_max_n)
        cs_p = min(max(cs_p, 0.0), p.c_s_max_p)
        n = p.N_x
        c_e_avg_n = float(state.c_e[:n].mean())
        c_e_avg_p = float(state.c_e[2 * n:].mean())
        i0_n = exchange_current(cs_n, p.c_s_max_n, c_e_avg_n, p.K_n, p.F)
        i0_p = exchange_current(cs_p, p.c_s_max_p, c_e_avg_p, p.K_p, p.F)
        # charge-transfer current densities: positive at the cathode on discharge
        J_p = current / (p.a_p * p.L_p * p.A_cell)
        J_n = -current / (p.a_n * p.L_n * p.A_cell)
        eta_p = overpotential(J_p, i0_p, p) if current != 0 else 0.0
        eta_n = overpotential(J_n, i0_n, p) if current != 0 else 0.0
        U_p = float(p.ocp_p(cs_p / p.c_s_max_p))
        U_n = float(p.ocp_n(cs_n / p.c_s_max_n))
        phi_drop = self.electrolyte_potential_drop(state, current)
        iR = current * p.R_c
        V = U_p - U_n - (eta_p - eta_n) - phi_drop - iR
        return VoltageBreakdown(U_p, U_n, eta_p, eta_n, phi_drop, iR, V)

    def surface_features(self, state: CellState, current: float):
        """(cs_p_surf, cs_n_surf, ce_0, ce_L) consumed by the error library."""
        grid_n, grid_p, grid_e = self._discretization(0.1)
        flux_n, flux_p = self._mass_fluxes(current)
        cs_n = grid_n.surface_concentration(state.c_s_n, flux_n)
        cs_p = grid_p.surface_concentration(state.c_s_p, flux_p)
        c = state.c_e
        ce_0 = c[0] + (c[0] - c[1]) / 2
        ce_L = c[-1] + (c[-1] - c[-2]) / 2
        return float(cs_p), float(cs_n), float(ce_0), float(ce_L)

    def simulate(self, current_profile, dt: float, soc0: float = 1.0,
                 state: CellState | None = None) -> "SimulationResult":
        current_profile = np.asarray(current_profile, dtype=float)
        if current_profile.size == 0:
            raise ConfigError("current profile must be non-empty")
        n = current_profile.size
        out = {k: np.empty(n) for k in ("t", "I", "V", "cs_p", "cs_n", "ce_0", "ce_L", "soc")}
        st = state.copy() if state is not None else self.initial_state(soc0)
        for k in range(n):
            I_k = float(current_profile[k])
            try:
                st = self.step(st, I_k, dt)
                vb = self.terminal_voltage(st, I_k)
            except (SaturationError, NumericError, DataError) as exc:
                raise NumericError(f"simulation failed at step {k} (t={(k + 1) * dt:.3f} s): {exc}") from exc
            cs_p, cs_n, ce_0, ce_L = self.surface_features(st, I_k)
            out["t"][k] = (k + 1) * dt
            out["I"][k] = I_k
            out["V"][k] = vb.V
            out["cs_p"][k] = cs_p
            out["cs_n"][k] = cs_n
            out["ce_0"][k] = ce_0
            out["ce_L"][k] = ce_L
            out["soc"][k] = st.soc
        return SimulationResult(final_state=st, **out)


@dataclass
class SimulationResult:
    t: np.ndarray
    I: np.ndarray
    V: np.ndarray
    cs_p: np.ndarray
    cs_n: np.ndarray
    ce_0: np.ndarray
    ce_L: np.ndarray
    soc: np.ndarray
    final_state: CellState

    COLUMNS = ("t", "I", "V", "cs_p", "cs_n", "ce_0", "ce_L", "soc")

    def to_csv(self, path):
        data = np.column_stack([getattr(self, c) for c in self.COLUMNS])
        np.savetxt(path, data, delimiter=",", header=",".join(self.COLUMNS), comments="")

    def features(self) -> np.ndarray:
        """Input channels (I, cs_p, cs_n, ce_0, ce_L) as an (n, 5) matrix."""
        return np.column_stack([self.I, self.cs_p, self.cs_n, self.ce_0, self.ce_L])
