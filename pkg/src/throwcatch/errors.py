"""Shared exception types."""


class ContractViolation(ValueError):
    """A caller broke a documented precondition."""


class NumericFault(RuntimeError):
    """Non-finite values showed up where finite ones are required."""


class InfeasibleDemo(RuntimeError):
    """The scripted thrower cannot reach the sampled target within limits."""
