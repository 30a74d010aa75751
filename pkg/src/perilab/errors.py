"""Exception taxonomy shared by all perilab modules.

Every failure mode surfaced by the public API maps to one of these classes so
that the CLI can translate them into stable exit codes (config errors -> 2,
numerical failures -> 3, bracket/hypothesis failures -> 4).
"""


class PerilabError(Exception):
    """Base class for all perilab errors."""


class ConfigError(PerilabError):
    """Invalid run configuration; message carries the offending field path."""


class ModelError(PerilabError):
    """Non-finite parameter or nonlinearity evaluation."""


class DomainError(PerilabError):
    """Arguments outside an operation's admissible domain."""


class DivergenceError(PerilabError):
    """ODE trajectory left the admissible range (blow-up past u_max)."""


class BlowUpError(PerilabError):
    """PDE solution norm exceeded the configured cap."""


class TruncationError(PerilabError):
    """Solution reached the truncated boundary; the domain is too small."""


class BracketError(PerilabError):
    """A bisection could not find (or keep) a sign-change bracket."""


class HypothesisError(PerilabError):
    """A structural hypothesis of a construction failed (e.g. a trajectory
    between two orbits is not monotone increasing)."""


class RangeError(PerilabError):
    """Values outside the numerically representable range (exp under/overflow
    in a transform); the message includes rescaling advice."""


class DomainTooSmallError(PerilabError):
    """Boundary-value problem has no solution at the requested half-width."""


class CertificateError(PerilabError):
    """Monotonicity certificate of the periodic iteration failed; carries the
    first offending node."""

    def __init__(self, message, node_index=None, period=None):
        super().__init__(message)
        self.node_index = node_index
        self.period = period


class NoConvergenceError(PerilabError):
    """Iteration hit its period budget; ``partial`` holds the partial result."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ShapeError(PerilabError):
    """A profile lacks the geometric feature an operation requires."""


class MatchError(PerilabError):
    """No known periodic orbit close enough to a measured level; carries the
    raw tail values."""

    def __init__(self, message, tail_values=None):
        super().__init__(message)
        self.tail_values = tail_values


class ArtifactError(PerilabError):
    """Missing or unreadable run artifacts (report/snapshot files)."""
