"""Exception types shared across the package.

Each carries enough context to explain the failure without rerunning.
"""


class WienerGMCError(Exception):
    """Base class for all package errors."""


class ConfigError(WienerGMCError, ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class BoxExitError(WienerGMCError):
    """A path left the region where the mollified field is fully resolved."""

    def __init__(self, slab, time, position, required_L, L):
        self.slab = slab
        self.time = time
        self.position = tuple(float(x) for x in position)
        self.required_L = float(required_L)
        self.L = float(L)
        super().__init__(
            f"path exits the safe box at t={time:.6g} (slab {slab}), position="
            f"{self.position}; box half-width L={L:.6g}, need L >= {required_L:.6g}"
        )


class ResourceBudgetError(WienerGMCError):
    """Requested materialization exceeds the configured memory budget."""

    def __init__(self, required_bytes, budget_bytes, what="noise array"):
        self.required_bytes = int(required_bytes)
        self.budget_bytes = int(budget_bytes)
        super().__init__(
            f"{what} needs {required_bytes / 2**20:.1f} MiB, budget is "
            f"{budget_bytes / 2**20:.1f} MiB"
        )


class NormalizationError(WienerGMCError, ValueError):
    """Mollifier profile cannot be normalized (zero or non-finite mass)."""


class DivergentIntegralError(WienerGMCError, ValueError):
    """A quantity the caller asked for is infinite (e.g. a weight with divergent 1/g^2 integral)."""


class ResolutionExhausted(WienerGMCError):
    """No sample hit the target event; the estimator has nothing to report."""
