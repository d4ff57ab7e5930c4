"""Candidate feature library: Chebyshev terms, cross products, extra nonlinearities.

Channels are ordered (e, I, cs_p, cs_n, ce_0, ce_L); the first is the voltage
error state, the rest the physical inputs.  All terms operate on channels
scaled to [-1, 1] over the training data.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError

CHANNELS = ("e", "I", "cs_p", "cs_n", "ce_0", "ce_L")
N_CHANNELS = len(CHANNELS)

# Extra nonlinear functions phi.  The paper-sized default applies all six to
# products of up to three distinct scaled channels; the compact default set
# is {sin, cos, tanh} on single channels.
PHI_FUNCS = {
    "sin": lambda x: np.sin(np.pi * x),
    "cos": lambda x: np.cos(np.pi * x),
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "sech": lambda x: 1.0 / np.cosh(x),
}
DEFAULT_EXTRAS = ("sin", "cos", "tanh")
FULL_EXTRAS = ("sin", "cos", "tanh", "sinh", "cosh", "sech")


def chebyshev(n: int, x):
    """Chebyshev polynomial of the first kind T_n(x) by recurrence.

    Values with |x| > 1 are permitted (they occur when inference inputs
    leave the training range); the recurrence stays defined.
    """
    if n < 0:
        raise ConfigError("Chebyshev order must be non-negative")
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.ones_like(x)
    t_prev, t = np.ones_like(x), x
    for _ in range(n - 1):
        t_prev, t = t, 2.0 * x * t - t_prev
    return t


@dataclass(frozen=True)
class TermDescriptor:
    """One basis function: pure function of a scaled (e, U) sample."""

    kind: str                      # constant | chebyshev | cross | phi
    degrees: tuple = (0,) * N_CHANNELS
    func: str | None = None        # phi function tag
    arg_channels: tuple = ()       # channels multiplied into the phi argument
    name: str = ""

    @property
    def total_degree(self) -> int:
        return sum(self.degrees)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Column for scaled samples X of shape (n, 6)."""
        n = X.shape[0]
        if self.kind == "constant":
            return np.ones(n)
        if self.kind == "phi":
            arg = np.ones(n)
            for ch in self.arg_channels:
                arg = arg * X[:, ch]
            return PHI_FUNCS[self.func](arg)
        col = np.ones(n)
        for ch, deg in enumerate(self.degrees):
            if deg > 0:
                col = col * chebyshev(deg, X[:, ch])
        return col


def _term_name(degrees, func=None, arg_channels=()):
    if func is not None:
        inner = "*".join(CHANNELS[c] for c in arg_channels)
        return f"{func}({inner})"
    parts = [f"T{d}({CHANNELS[c]})" for c, d in enumerate(degrees) if d > 0]
    return "*".join(parts) if parts else "1"


@dataclass(frozen=True)
class ScalingParams:
    """Per-channel min/max recorded on the training split."""

    mins: tuple
    maxs: tuple

    def __post_init__(self):
        for lo, hi, name in zip(self.mins, self.maxs, CHANNELS):
            if not hi > lo:
                raise ConfigError(f"degenerate channel '{name}': max ({hi}) <= min ({lo})")

    @classmethod
    def fit(cls, X: np.ndarray) -> "ScalingParams":
        X = np.asarray(X, dtype=float)
        return cls(tuple(X.min(axis=0).tolist()), tuple(X.max(axis=0).tolist()))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """x' = 2 (x - min) / (max - min) - 1 per channel, no clipping."""
        mins = np.asarray(self.mins)
        maxs = np.asarray(self.maxs)
        return 2.0 * (np.asarray(X, dtype=float) - mins) / (maxs - mins) - 1.0

    def invert(self, Xs: np.ndarray) -> np.ndarray:
        mins = np.asarray(self.mins)
        maxs = np.asarray(self.maxs)
        return (np.asarray(Xs, dtype=float) + 1.0) / 2.0 * (maxs - mins) + mins

    def apply_channel(self, x, channel: int):
        lo, hi = self.mins[channel], self.maxs[channel]
        return 2.0 * (np.asarray(x, dtype=float) - lo) / (hi - lo) - 1.0

    def invert_channel(self, xs, channel: int):
        lo, hi = self.mins[channel], self.maxs[channel]
        return (np.asarray(xs, dtype=float) + 1.0) / 2.0 * (hi - lo) + lo

    def to_dict(self):
        return {"mins": list(self.mins), "maxs": list(self.maxs)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mins"]), tuple(d["maxs"]))


@dataclass(frozen=True)
class LibrarySpec:
    """Ordered, canonically enumerated term list with its generating knobs."""

    terms: tuple
    d: int
    p_c: tuple
    extras: tuple
    phi_max_factors: int = 1

    def __post_init__(self):
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ConfigError("library term names must be unique")

    def __len__(self):
        return len(self.terms)

    @property
    def names(self):
        return [t.name for t in self.terms]

    def to_json(self) -> str:
        payload = {
            "d": self.d,
            "p_c": list(self.p_c),
            "extras": list(self.extras),
            "phi_max_factors": self.phi_max_factors,
            "terms": [
                {
                    "kind": t.kind,
                    "degrees": list(t.degrees),
                    "func": t.func,
                    "arg_channels": list(t.arg_channels),
                    "name": t.name,
                }
                for t in self.terms
            ],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LibrarySpec":
        d = json.loads(text)
        terms = tuple(
            TermDescriptor(
                kind=t["kind"],
                degrees=tuple(t["degrees"]),
                func=t["func"],
                arg_channels=tuple(t["arg_channels"]),
                name=t["name"],
            )
            for t in d["terms"]
        )
        return cls(terms, d["d"], tuple(d["p_c"]), tuple(d["extras"]), d["phi_max_factors"])


def enumerate_candidates(d: int, p_c, extras=DEFAULT_EXTRAS,
                         phi_max_factors: int = 1) -> LibrarySpec:
    """Deterministic canonical enumeration of the candidate pool.

    Order: constant, univariate error-state terms, univariate input terms
    (channel then order), cross terms (lexicographic degree vectors, 2-3
    factors, total degree <= d, per-channel order <= p_c), then phi terms
    (function order as given, applied to products of 1..phi_max_factors
    distinct channels, channel combinations in lexicographic order).
    """
    if not 1 <= d <= 5:
        raise ConfigError("d must lie in [1, 5]")
    if isinstance(p_c, int):
        p_c = (p_c,) * N_CHANNELS
    p_c = tuple(int(p) for p in p_c)
    if len(p_c) != N_CHANNELS or any(not 1 <= p <= 5 for p in p_c):
        raise ConfigError("p_c must be 6 entries in [1, 5]")
    for tag in extras:
        if tag not in PHI_FUNCS:
            raise ConfigError(f"unknown extra function '{tag}'")

    terms = [TermDescriptor("constant", name="1")]
    # univariate terms, error state first then inputs
    for ch in range(N_CHANNELS):
        for order in range(1, min(p_c[ch], d) + 1):
            deg = tuple(order if c == ch else 0 for c in range(N_CHANNELS))
            terms.append(TermDescriptor("chebyshev", deg, name=_term_name(deg)))
    # cross terms: 2..3 factors, lexicographic degree vectors
    for deg in itertools.product(*(range(0, min(p, d) + 1) for p in p_c)):
        nz = sum(1 for v in deg if v > 0)
        if 2 <= nz <= 3 and sum(deg) <= d:
            terms.append(TermDescriptor("cross", deg, name=_term_name(deg)))
    # extra phi terms
    for tag in extras:
        for n_args in range(1, phi_max_factors + 1):
            for combo in itertools.combinations(range(N_CHANNELS), n_args):
                terms.append(
                    TermDescriptor(
                        "phi", func=tag, arg_channels=combo,
                        name=_term_name(None, tag, combo),
                    )
                )
    return LibrarySpec(tuple(terms), d, p_c, tuple(extras), phi_max_factors)


def paper_sized_pool() -> LibrarySpec:
    """Default full candidate pool, tuned to 626 terms (see README)."""
    return enumerate_candidates(
        d=5, p_c=(4, 5, 5, 5, 5, 5), extras=FULL_EXTRAS, phi_max_factors=3
    )


def build_theta(X_scaled: np.ndarray, spec: LibrarySpec,
                columns=None) -> np.ndarray:
    """Feature matrix Theta for scaled samples; column j = spec.terms[j].

    `columns` restricts evaluation to a subset of term indices (order kept).
    """
    X = np.asarray(X_scaled, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != N_CHANNELS:
        raise ConfigError(f"expected {N_CHANNELS} channels, got {X.shape[1]}")
    idx = range(len(spec.terms)) if columns is None else columns
    cols = []
    for j in idx:
        term = spec.terms[j]
        col = term.evaluate(X)
        if not np.all(np.isfinite(col)):
            row = int(np.flatnonzero(~np.isfinite(col))[0])
            raise NumericError(f"non-finite value in term '{term.name}' at row {row}")
        cols.append(col)
    return np.column_stack(cols)
