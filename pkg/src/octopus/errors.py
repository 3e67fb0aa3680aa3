"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Caller passed arguments violating an operation's preconditions."""


class InvalidStateError(RuntimeError):
    """Operation invoked in a state where its contract does not apply."""


class ContractViolation(RuntimeError):
    """Internal API misuse (e.g. consulting a distorted stream for a null action)."""


class DataIntegrityError(RuntimeError):
    """Persisted artifacts disagree with the configuration used to read them."""


class CheckpointError(DataIntegrityError):
    """Checkpoint file is malformed, version-mismatched, or shape-mismatched."""
