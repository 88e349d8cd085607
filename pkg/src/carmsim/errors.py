"""Exception hierarchy shared across the simulator.

Every error carries a stable machine-readable ``category`` string so the
CLI and the HTTP service can surface failures uniformly.
"""


class SimulatorError(Exception):
    """Base class for all simulator failures."""

    category = "runtime"


class ConfigError(SimulatorError):
    category = "config"


class GeometryError(SimulatorError):
    category = "geometry"


class HeaderError(SimulatorError):
    category = "header"


class PayloadError(SimulatorError):
    category = "payload"


class ValidationError(SimulatorError):
    category = "validation"


class LabelError(ValidationError):
    """Malformed ranked-landmark label text."""

    category = "label"

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class AlignmentError(SimulatorError):
    category = "alignment"


class InputError(SimulatorError):
    category = "input"


class TransportError(SimulatorError):
    category = "transport"
