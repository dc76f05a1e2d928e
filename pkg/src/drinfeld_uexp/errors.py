"""Error taxonomy shared by all modules.

Every computational failure mode has its own class so the CLI can emit
machine-readable codes.  ``code`` is stable across releases.
"""


class ComputationError(Exception):
    """Base class for failures of a well-posed computation."""

    code = "computation_error"

    def payload(self):
        return {"code": self.code, "message": str(self)}


class PrecisionExhausted(ComputationError):
    """A result or comparison cannot be determined at working precision."""

    code = "precision_exhausted"


class InversionOfZeroBall(ComputationError):
    """Inverse requested of a ball indistinguishable from zero."""

    code = "inversion_of_zero_ball"


class EnumerationTooLarge(ComputationError):
    """A lattice or group enumeration exceeds the configured cap."""

    code = "enumeration_too_large"


class UnsupportedGroup(ComputationError):
    code = "unsupported_group"


class ZeroVector(ComputationError):
    code = "zero_vector"


class RankMismatch(ComputationError):
    """Drinfeld coefficients persist beyond the expected degree."""

    code = "rank_mismatch"


class OnLattice(ComputationError):
    """The evaluation point lies on the lattice at working precision."""

    code = "on_lattice"


class NoConvergence(ComputationError):
    code = "no_convergence"


class AliasingDetected(ComputationError):
    """Two-radius stability check of a u-expansion failed."""

    code = "aliasing_detected"


class ConditionViolated(ComputationError):
    """A transform's convergence precondition does not hold."""

    code = "condition_violated"


class Inconclusive(ComputationError):
    """A semi-decision returned no usable evidence."""

    code = "inconclusive"


class UsageError(Exception):
    """Bad command-line arguments or malformed input."""
