"""Exception hierarchy shared by all modules."""


class WardropError(Exception):
    """Base class for errors raised by this package."""


class NetworkError(WardropError, ValueError):
    """Invalid network description (unknown node/edge, bad path, bad rate)."""


class InfeasibleLoadError(WardropError):
    """An edge load left the domain of its latency function."""

    def __init__(self, edge, load, limit):
        self.edge = edge
        self.load = load
        self.limit = limit
        super().__init__(
            f"load {load:.12g} on edge {edge!r} is at or beyond capacity {limit:.12g}"
        )


class NotInteriorError(WardropError, ValueError):
    """A reference flow was required to be strictly interior."""


class NotWardropError(WardropError):
    """A flow that was required to be a Wardrop equilibrium is not one."""


class NoFeasibleFlowError(WardropError):
    """Every admissible flow saturates some M/M/1 edge."""


class ConditionError(WardropError):
    """A precondition of a stability or recurrence bound does not hold."""


class ConfigError(WardropError):
    """Configuration document failed validation.

    ``problems`` holds ``(field_path, message)`` pairs, all of them, not just the first.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{path or '<root>'}: {msg}" for path, msg in self.problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
