"""Exception types shared across the package."""


class ScflError(Exception):
    """Base class for every error raised on purpose by this package."""


class ShapeError(ScflError, ValueError):
    pass


class ConfigError(ScflError, ValueError):
    """Invalid or inconsistent configuration, detected before training starts."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class InfiniteLeakageError(ScflError, ValueError):
    """Privacy budget undefined: a client has h = 0 and receives no noise."""


class DivergenceError(ScflError, RuntimeError):
    def __init__(self, epoch, loss, limit):
        self.epoch = epoch
        self.loss = loss
        self.limit = limit
        super().__init__(
            f"training diverged at epoch {epoch}: loss {loss:.6g} exceeds {limit:.6g}"
        )
