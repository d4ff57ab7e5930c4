"""Exception hierarchy shared across the toolkit."""


class AesibattError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(AesibattError):
    """Invalid or inconsistent configuration / input files."""


class DataError(AesibattError):
    """Malformed or physically inconsistent dataset."""


class SaturationError(AesibattError):
    """Solid concentration left [0, c_s_max] in one electrode."""

    def __init__(self, electrode, value, c_max):
        self.electrode = electrode
        super().__init__(
            f"solid concentration {value:.6g} outside [0, {c_max:.6g}] "
            f"in {electrode} electrode"
        )


class NumericError(AesibattError):
    """Solver non-convergence or numerically invalid intermediate."""


class InfeasibleSearchError(AesibattError):
    """Evolutionary search finished without a feasible genome."""

    def __init__(self, best_report):
        self.best_report = best_report
        super().__init__(
            "no feasible genome found; best infeasible report attached"
        )
