"""Exception hierarchy shared across the package."""


class VaoiError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(VaoiError, ValueError):
    """A system parameter violates its domain constraint."""


class StateSpaceError(VaoiError, ValueError):
    """A state component or state index is out of range."""


class KernelSizeError(VaoiError, RuntimeError):
    """The requested state space exceeds the configured size limit."""

    def __init__(self, count: int, limit: int):
        super().__init__(f"state space has {count} states, exceeding the limit of {limit}")
        self.count = count
        self.limit = limit


class SolverNumericsError(VaoiError, RuntimeError):
    """NaN or Inf appeared in the value iterates."""


class InstanceTooLargeError(VaoiError, RuntimeError):
    """Exhaustive policy enumeration would exceed the policy-count guard."""

    def __init__(self, policy_count: int, limit: int):
        super().__init__(
            f"instance has {policy_count} deterministic policies, exceeding the guard of {limit}"
        )
        self.policy_count = policy_count
        self.limit = limit


class SingularChainError(VaoiError, RuntimeError):
    """Recurrent-class extraction or the stationary linear solve failed."""


class FingerprintMismatchError(VaoiError, ValueError):
    """A persisted table was produced under different system parameters."""
