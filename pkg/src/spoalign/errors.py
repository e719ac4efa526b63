class SpoAlignError(Exception):
    """Base class for all errors raised by spoalign."""


class DataError(SpoAlignError, ValueError):
    """Malformed or inconsistent input data (scores files, manifests, embeddings)."""


class DegenerateStatsError(SpoAlignError, ValueError):
    """A standard deviation needed for normalization is zero (or below the floor)."""


class UndefinedCosineError(SpoAlignError, ValueError):
    """A vector entering a cosine similarity has (near) zero norm."""


class UndefinedCorrelationError(SpoAlignError, ValueError):
    """A correlation coefficient is undefined (zero variance or too few points)."""


class TrainingError(SpoAlignError, RuntimeError):
    """Non-finite loss or gradient during optimization."""


class PipelineError(SpoAlignError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
