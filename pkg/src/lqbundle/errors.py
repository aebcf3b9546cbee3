"""Exception hierarchy shared by all modules.

Every failure mode named in an operation contract maps to one class here so
callers (and the pipeline runner) can record failures without string matching.
"""


class LqBundleError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(LqBundleError):
    """Base class for input-validation failures."""


# spectral model
class NonPositiveEigenvalue(ValidationError):
    pass


class NotSorted(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class NegativeTime(ValidationError):
    pass


class NegativeBeta(ValidationError):
    pass


class SingularShift(LqBundleError):
    """Resolvent requested at (numerically) spectral point."""


# symplectic geometry
class OddLength(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NotADirectSum(LqBundleError):
    pass


class NotAGraph(LqBundleError):
    """Projection onto the sharp factor is singular on the subspace."""


# dichotomies / Lyapunov-Perron
class SpectrumOnAxis(LqBundleError):
    pass


class DiagonalOfKernel(ValidationError):
    """Green kernel evaluated at t == s."""


class HorizonTooShort(ValidationError):
    pass


# frequency domain
class TailNotCertified(LqBundleError):
    pass


class ConditionFailed(LqBundleError):
    """A prerequisite certificate (frequency condition) does not hold."""


# stationary Hamiltonian
class SingularF3(ValidationError):
    pass


class NotLagrange(LqBundleError):
    """Constructed subspace fails the Lagrange test (violated hypotheses)."""


class FrequencyConditionFailed(LqBundleError):
    pass


class Oscillating(LqBundleError):
    """Stable subspace meets the vertical subspace nontrivially."""


class NotATrajectory(ValidationError):
    pass


class SampleNotInM0(ValidationError):
    pass


class EpsilonTooLarge(LqBundleError):
    pass


# spatial averaging
class NoCandidate(LqBundleError):
    pass


class AValueOutOfRange(ValidationError):
    pass


class AmplitudeTooLarge(ValidationError):
    pass


class NotAContraction(LqBundleError):
    pass


class ContractionFailed(LqBundleError):
    pass


class NotInFiber(ValidationError):
    pass


class NotPositive(LqBundleError):
    """V-form certificate cannot find a positive coercivity constant."""


# scenario / reporting
class ParseError(ValidationError):
    pass


class MissingField(ValidationError):
    pass


class IoError(LqBundleError):
    pass
