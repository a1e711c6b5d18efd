class CoxBalanceError(Exception):
    """Base class for all package errors."""


class ConfigError(CoxBalanceError, ValueError):
    pass


class RoutingError(CoxBalanceError, ValueError):
    """A routing distribution puts mass on classes with no servers."""


class StateCapExceeded(CoxBalanceError):
    def __init__(self, required: int, cap: int):
        self.required = required
        self.cap = cap
        super().__init__(
            f"state space has {required} states, above the cap of {cap}; "
            f"raise the cap to at least {required} (COXBALANCE_STATE_CAP)"
        )
