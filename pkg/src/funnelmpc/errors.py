"""Exception hierarchy shared by all modules."""


class FunnelMPCError(Exception):
    """Base class for all package errors."""


class NonFiniteState(FunnelMPCError, ArithmeticError):
    def __init__(self, t, message="non-finite state derivative"):
        self.t = float(t)
        super().__init__(f"{message} at t={self.t:.17g}")


class StepUnderflow(FunnelMPCError, ArithmeticError):
    def __init__(self, t, h):
        self.t = float(t)
        self.h = float(h)
        super().__init__(f"step size {self.h:.3e} underflow at t={self.t:.17g}")


class OrderExceedsRelativeDegree(FunnelMPCError, ValueError):
    pass


class FunnelViolation(FunnelMPCError):
    """The error left the performance funnel at some level.

    ``margin`` is ``1/phi_i(t) - |e_i(t)|`` at the offending level (<= 0).
    Closed loops that detect the violation after the fact attach the
    partial run as ``record``.
    """

    record = None

    def __init__(self, level, t, margin):
        self.level = int(level)
        self.t = float(t)
        self.margin = float(margin)
        super().__init__(
            f"funnel violated at level {self.level}, t={self.t:.17g} "
            f"(margin {self.margin:.3e})"
        )


class InfeasibleInitialPoint(FunnelMPCError):
    pass


class SolverStalled(FunnelMPCError):
    pass


class GridMismatch(FunnelMPCError, ValueError):
    pass


class AllStartsFailed(FunnelMPCError):
    pass


class ConfigError(FunnelMPCError, ValueError):
    """Invalid scenario file; carries where the problem is when known."""

    def __init__(self, message, section=None, field=None, line=None):
        self.section, self.field, self.line = section, field, line
        where = ".".join(p for p in (section, field) if p)
        if line is not None:
            where = f"line {line}: {where}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class IncomparableScenarios(FunnelMPCError, ValueError):
    pass
