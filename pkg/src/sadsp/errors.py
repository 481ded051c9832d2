"""Exception types shared across the package."""


class SadspError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SadspError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(SadspError):
    """backward() was asked to run from something that is not a scalar graph output."""


class ContractError(SadspError):
    """An argument violates a documented precondition."""


class SpecError(SadspError):
    """A dataset specification cannot be satisfied as stated."""


class ParseError(SadspError):
    """A feature or score file is malformed; the message names the offset or field."""


class CheckpointError(SadspError):
    """A checkpoint file is malformed or inconsistent with the declared model dims."""


class ConfigError(SadspError):
    """A config file or command line option is invalid."""


class TrainingDivergence(SadspError):
    """A loss became NaN or Inf during training."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        msg = f"non-finite loss at epoch {epoch}, batch {batch}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
