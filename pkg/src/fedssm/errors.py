"""Exception types shared across the package."""


class FedssmError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(FedssmError, ValueError):
    """Matrix or sequence shapes violate an operation's contract."""


class SimulationOverflowError(FedssmError, OverflowError):
    """A state or output became non-finite during simulation.

    ``step`` is the 0-based index of the first offending time step.
    """

    def __init__(self, step: int):
        self.step = int(step)
        super().__init__(f"non-finite value at simulation step {step}")


class SingularTransformError(FedssmError):
    """A transformation matrix is singular to machine precision."""


class UncontrollableModelError(FedssmError):
    """Controllability matrix is rank deficient; canonical transform undefined.

    ``rank`` is the numerical rank found.
    """

    def __init__(self, rank: int, nx: int):
        self.rank = int(rank)
        self.nx = int(nx)
        super().__init__(f"controllability matrix has rank {rank} < {nx}")


class InvalidMuError(FedssmError):
    """The selected controllability columns are linearly dependent."""


class DegeneratePseudoDataError(FedssmError):
    """Reference pseudo-state trajectory is not persistently exciting."""


class UndefinedBfrError(FedssmError, ZeroDivisionError):
    """Best-fit-rate denominator is zero (constant reference signal)."""


class DegenerateChannelError(FedssmError):
    """A data channel has zero variance and cannot be normalized."""


class CsvFormatError(FedssmError, ValueError):
    """A CSV file failed to parse or does not match the expected schema."""


class UnstableTruthError(FedssmError):
    """Refusing to generate data from an unstable truth system."""


class ConfigError(FedssmError, ValueError):
    """An experiment configuration failed validation.

    ``field`` carries a dotted path to the offending entry.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptyComparisonError(FedssmError):
    """No seeds survived the exclusion rule in either result set."""
