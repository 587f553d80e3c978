"""Exception hierarchy shared by all edgestream modules."""


class EdgeStreamError(Exception):
    pass


class ConfigError(EdgeStreamError, ValueError):
    """Invalid module configuration (bad bitrate, fps, MTU, ...)."""


class FramingError(EdgeStreamError, ValueError):
    """A wire buffer is truncated or otherwise cannot be decoded."""


class ProtocolError(EdgeStreamError):
    """Fragments of one frame disagree with each other."""


class AccountingError(EdgeStreamError, RuntimeError):
    """Estimator used out of order. Always a caller bug."""


class RoutingError(EdgeStreamError):
    pass


class ScenarioError(EdgeStreamError, ValueError):
    """Scenario file failed to parse or validate.

    ``key`` and ``line`` point at the offending entry when known.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
