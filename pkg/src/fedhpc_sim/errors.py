"""Exception types raised across the simulator."""


class SimulatorError(Exception):
    """Base class for all simulator errors."""


class InvalidDimensionError(SimulatorError, ValueError):
    pass


class DimensionMismatchError(SimulatorError, ValueError):
    pass


class EmptyDatasetError(SimulatorError, ValueError):
    pass


class PartitionError(SimulatorError, ValueError):
    pass


class MixedVersionError(SimulatorError, ValueError):
    pass


class StalenessError(SimulatorError, ValueError):
    """An update claims a base version newer than the server's model."""


class UnknownGroupError(SimulatorError, KeyError):
    pass


class ClientBusyError(SimulatorError, RuntimeError):
    pass


class EmptyQueueError(SimulatorError, IndexError):
    pass


class EmptyLogError(SimulatorError, ValueError):
    pass


class ConfigError(SimulatorError, ValueError):
    """Scenario config failed to parse or validate.

    ``path`` is a dotted field path (``facilities[2].queue.sigma``) or a
    ``line N`` marker for syntax errors.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)
