"""Shared exception types with CLI exit-code semantics."""


class HybridcastError(Exception):
    """Base class for all toolkit errors."""


class DataError(HybridcastError):
    """Bad input data or files (CLI exit code 2)."""


class IngestError(DataError):
    """Ingestion failed; carries per-record error messages."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class EmptyInputError(DataError):
    """An input file or dataset contained no usable records."""


class NumericError(HybridcastError):
    """Numeric failure such as divergence or non-finite values (CLI exit code 3)."""


class NonFiniteActivationError(NumericError):
    """A network activation became non-finite; names the offending layer."""

    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite activation in {where}")


class TrainingDivergedError(NumericError):
    """Training loss became non-finite; carries the last finite parameters."""

    def __init__(self, step: int, last_good_params=None):
        self.step = step
        self.last_good_params = last_good_params
        super().__init__(f"training loss non-finite at step {step}")


class ConfigError(DataError):
    """Invalid or unknown configuration keys/values."""
