"""Exception types shared across the package."""


class GroupLossError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(GroupLossError, ValueError):
    """A scalar or configuration parameter is outside its valid range."""


class ContractError(GroupLossError, ValueError):
    """An input violates a precondition (shape, sign, index range)."""


class NumericError(GroupLossError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class InvalidBatchError(GroupLossError, ValueError):
    """A mini-batch leaves nothing to compute a loss on."""


class SamplerError(GroupLossError, ValueError):
    """The dataset cannot supply the requested batch geometry."""


class DatasetError(GroupLossError, ValueError):
    """A dataset file is malformed or a dataset cannot be generated."""


class CheckpointError(GroupLossError, OSError):
    """A checkpoint file is unreadable, corrupt or of an unknown schema."""
