"""Exception hierarchy shared across the package."""


class MTLocoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MTLocoError, ValueError):
    """Dimensions, config files or checkpoints do not fit together."""


class ArgumentError(MTLocoError, ValueError):
    """An argument violates an operation's precondition."""


class StateError(MTLocoError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NumericError(MTLocoError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class ContractError(MTLocoError, ValueError):
    """A call was routed to the wrong regime (e.g. bipedal reward on a quadruped)."""
