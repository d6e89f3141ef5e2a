"""Exception hierarchy shared by all modules."""


class SpikefuseError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SpikefuseError, ValueError):
    """Array shapes or lengths do not agree."""


class SpecError(SpikefuseError, ValueError):
    """An ArchitectureSpec violates one of its invariants."""


class ConfigError(SpikefuseError, ValueError):
    """A run configuration is malformed (unknown key, bad value)."""


class DataError(SpikefuseError):
    """Input data is missing, corrupt, or inconsistent."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if offset is not None:
            parts.append(f"byte offset={offset}")
        super().__init__(", ".join(parts))


class TapeError(SpikefuseError, RuntimeError):
    """The autodiff tape was used out of order."""


class DivergenceError(SpikefuseError, FloatingPointError):
    """A loss or gradient became non-finite."""

    def __init__(self, message, node=None, epoch=None, batch=None):
        self.node = node
        self.epoch = epoch
        self.batch = batch
        ctx = [f"{k}={v}" for k, v in (("node", node), ("epoch", epoch), ("batch", batch)) if v is not None]
        super().__init__(message + (f" ({', '.join(ctx)})" if ctx else ""))
