class GBFLError(Exception):
    """Base class for errors raised by this package."""


class DataError(GBFLError, ValueError):
    pass


class ModelError(GBFLError):
    pass


class ExplainerError(GBFLError):
    pass


class ClauseError(GBFLError):
    pass


class PipelineError(GBFLError):
    def __init__(self, message, stage=None, seed=None):
        where = ", ".join(f"{k}={v}" for k, v in (("stage", stage), ("seed", seed)) if v is not None)
        super().__init__(f"[{where}] {message}" if where else message)
        self.message = message
        self.stage = stage
        self.seed = seed
