"""Exception types shared across the package.

Every error raised by the library derives from :class:`Error` so callers can
catch the whole family with one handler.
"""

from __future__ import annotations


class Error(Exception):
    """Base class for all fdicode errors."""


class DimensionMismatch(Error):
    """Matrix or vector shapes are mutually inconsistent."""


class NotDetectable(Error):
    """(A, C) has an unobservable mode on or outside the unit circle."""


class CovarianceNotPSD(Error):
    """A noise covariance is not symmetric positive semidefinite."""


class EigensolverFailure(Error):
    """The eigensolver did not converge."""


class UnsupportedSpectrum(Error):
    """All unstable eigenvalues are complex; the real-eigenvector pipeline
    cannot use them."""


class HorizonTooShort(Error):
    """An attack sequence does not cover the requested simulation horizon."""


class RiccatiNoConvergence(Error):
    """Fixed-point Riccati iteration failed to produce a valid design."""


class SingularQuadraticForm(Error):
    """The quadratic-form matrix of the detection statistic is singular."""


class UnstableObserver(Error):
    """A - H*C is not Schur stable."""


class ScaleSearchFailed(Error):
    """No positive injection scale satisfies the residue budget."""


class SingularCoding(Error):
    """Coding matrix is singular or too ill-conditioned to invert."""


class ZeroVector(Error):
    """The attack direction C*v is zero, so coding cannot rotate it."""


class ZeroSubspace(Error):
    """All attack-direction images C*v_i are zero."""


class DimensionTooSmall(Error):
    """Rotation-based coding needs at least two sensors (p >= 2)."""


class IndexOutOfRange(Error, IndexError):
    """Rotation plane index exceeds the sensor dimension."""


class DegenerateLSWarning(UserWarning):
    """A rank-deficient inner least-squares solve was resolved by the
    minimum-norm solution."""


class Exhausted(Error):
    """The streaming estimator hit its step cap before meeting the target
    cost.  The last estimate is attached as ``result``."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class BaseNeverDetected(Error):
    """The base attack is never detected on the coded system, so the stealth
    gain is undefined."""


class HorizonExhausted(Error):
    """The refresh-interval search hit its measurement cap without the gain
    reaching the threshold."""


class ConfigInvalid(Error):
    """Scenario configuration failed validation; the message names the
    offending key."""


class UnknownFigure(Error):
    """Requested reproduction scenario does not exist."""
