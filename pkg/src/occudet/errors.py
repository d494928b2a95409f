"""Exception types shared across the package.

Data-validation errors derive from :class:`DataError` and numerical
failures from :class:`NumericalError`, so callers (notably the CLI) can
map them onto distinct exit codes.
"""


class OccudetError(Exception):
    """Base class for all package-specific errors."""


class DataError(OccudetError):
    """Invalid or inconsistent input data."""


class MissingColumn(DataError):
    """A required CSV column is absent."""

    def __init__(self, column: str, path: str = ""):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing required column {column!r}{where}")


class DanglingReference(DataError):
    """A row references an identifier that does not exist."""

    def __init__(self, identifier: str, kind: str = "id"):
        self.identifier = identifier
        self.kind = kind
        super().__init__(f"unknown {kind} {identifier!r}")


class EmptyTable(DataError):
    """A table that must contain rows is empty."""


class ZeroVarianceColumn(DataError):
    """A continuous covariate column is constant."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"column {column!r} has zero variance")


class AllSpeciesRemoved(DataError):
    """Rare-species filtering removed every species."""


class DimensionMismatch(DataError):
    """Array shapes are inconsistent with the model dimensions."""


class DomainError(OccudetError):
    """A parameter lies outside its domain (e.g. sigma <= 0)."""


class NumericalError(OccudetError):
    """A numerical routine produced an invalid result."""


class NonFiniteResult(NumericalError):
    """A likelihood or posterior evaluation returned NaN/inf.

    Must never fire for finite parameters; indicates an overflow bug.
    """


class NonFiniteObjective(NumericalError):
    """The variational objective became non-finite.

    Carries the index of the offending draw when known.
    """

    def __init__(self, message: str, draw_index: int | None = None):
        self.draw_index = draw_index
        super().__init__(message)


class NonFiniteGradient(NumericalError):
    """A gradient evaluation returned NaN/inf."""


class AllDivergent(NumericalError):
    """More than half of the post-warmup HMC transitions diverged."""


class TooFewDraws(OccudetError):
    """Not enough MCMC draws for the requested diagnostic."""


class NoDetections(DataError):
    """A species has no positive records, so its MLE does not exist."""


class DegenerateLabels(DataError):
    """AUC needs at least one positive and one negative label."""


class ConfigError(OccudetError):
    """Invalid CLI configuration; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field {field!r}: {message}")
