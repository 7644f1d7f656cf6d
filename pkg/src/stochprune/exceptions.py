"""Exception types raised across the package."""


class StochPruneError(Exception):
    """Base class for package errors."""


class ShapeError(StochPruneError, ValueError):
    pass


class NonFiniteLossError(StochPruneError, FloatingPointError):
    def __init__(self, sample_index, value=float("nan")):
        self.sample_index = int(sample_index)
        self.value = value
        super().__init__(f"non-finite loss {value!r} at sample {self.sample_index}")


class DivergenceError(StochPruneError, FloatingPointError):
    def __init__(self, epoch, value=float("nan")):
        self.epoch = int(epoch)
        self.value = value
        super().__init__(f"training diverged at epoch {self.epoch} (loss={value!r})")


class InfiniteKLError(StochPruneError, ValueError):
    """Posterior puts mass where the prior has none."""


class SplitAccessError(StochPruneError, RuntimeError):
    """The held-out bound set was read while it was locked."""


class IdxFormatError(StochPruneError, ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedPayloadError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class ConfigError(StochPruneError, ValueError):
    pass
