"""Exception types shared across the toolkit."""


class FlowvolError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(FlowvolError):
    """Vector/matrix shapes do not line up."""


class NonConvergence(FlowvolError):
    """Iterative scheme failed to settle within its iteration budget."""


class Unstable(FlowvolError):
    """Branching matrix has spectral radius >= 1; the process is supercritical."""


class Singular(FlowvolError):
    """Id - Phi is numerically singular."""


class DegenerateDenominator(FlowvolError):
    """Closed-form denominator vanishes for these parameters."""


class ExplosionGuard(FlowvolError):
    """Simulation exceeded its event cap."""


class NegativeKernel(FlowvolError):
    """Cluster simulation requires nonnegative kernel coefficients."""


class InsufficientSpan(FlowvolError):
    """Price path is too short for the requested sampling scale."""


class UnsortedInput(FlowvolError):
    """Input that must be time-ordered is not."""


class EmptyHorizon(FlowvolError):
    """Estimation window has zero or negative length."""


class SingularSystem(FlowvolError):
    """Normal equations could not be factorized even with ridge."""


class InsufficientEvents(FlowvolError):
    """Agent has fewer events than the estimation threshold."""


class NoEligibleAgents(FlowvolError):
    """No agent on the day passes the event threshold."""


class InconsistentQuotes(FlowvolError):
    """Best bid/ask context is crossed or missing."""


class TooFewObservations(FlowvolError):
    """Decile conditioning needs at least ten observations."""


class SchemaViolation(FlowvolError):
    """CSV row does not match the declared schema."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class UnparseableTimestamp(SchemaViolation):
    """Timestamp field could not be parsed as integer nanoseconds."""


class EmptySeries(FlowvolError):
    """Daily series is empty."""


class ZeroSigma(FlowvolError):
    """Squared volatility is zero; impact fractions undefined."""


class ZeroIntensity(FlowvolError):
    """Agent has zero total mean intensity; exogenous fraction undefined."""


class NonpositivePrice(FlowvolError):
    """Annualization needs a positive reference price."""


class ConfigError(FlowvolError):
    """Run configuration failed validation."""


class NegativeBaselineWarning(UserWarning):
    """Recovered baseline has negative entries (reported, never clamped)."""
