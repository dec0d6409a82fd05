"""Exception types raised across railtwin."""


class RailtwinError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ConfigError(RailtwinError, ValueError):
    """A configuration object violates its invariants."""


class TopologyError(RailtwinError):
    pass


class RoutingError(RailtwinError):
    pass


class UnroutableFlowError(RoutingError):
    def __init__(self, flow_id, reason):
        self.flow_id = flow_id
        super().__init__(f"flow {flow_id}: {reason}")


class ParseError(RailtwinError):
    """Input file cannot be parsed at all (CLI exit code 2)."""


class NotFittedError(RailtwinError, AttributeError):
    pass


class DataError(RailtwinError, ValueError):
    """Input records cannot support the requested metric."""
