"""Exception hierarchy shared by all modules."""

from __future__ import annotations

__all__ = [
    "HDPTransportError",
    "DomainMismatch",
    "InvalidMeasure",
    "InvalidCoupling",
    "InvalidParameter",
    "PartitionGap",
    "InvalidEnsemble",
    "NumericalUnderflow",
    "KernelNotInvertible",
    "EmptyData",
    "NumericalFailure",
    "EmptySupport",
    "SupportMismatch",
    "DegenerateDirichlet",
    "InsufficientSignal",
    "SupportsOverlap",
    "UnknownExperiment",
]


class HDPTransportError(Exception):
    """Base class for every error raised by this package."""


class DomainMismatch(HDPTransportError, ValueError):
    """Two objects live on different domains or dimensions."""


class InvalidMeasure(HDPTransportError, ValueError):
    """Atoms or weights violate the discrete-measure invariants."""


class InvalidCoupling(HDPTransportError, ValueError):
    """A coupling matrix has the wrong shape, sign or marginals."""


class InvalidParameter(HDPTransportError, ValueError):
    """A scalar parameter is outside its admissible range."""


class PartitionGap(HDPTransportError, ValueError):
    """Some atom is not covered by any partition cell."""


class InvalidEnsemble(HDPTransportError, ValueError):
    """An ensemble of measures is empty or inconsistent."""


class NumericalUnderflow(HDPTransportError, ArithmeticError):
    """Every Monte Carlo weight is exactly zero in log space."""


class KernelNotInvertible(HDPTransportError, ValueError):
    """The kernel's Fourier transform vanishes on the frequency grid."""


class EmptyData(HDPTransportError, ValueError):
    """An estimator received zero observations."""


class NumericalFailure(HDPTransportError, ArithmeticError):
    """A likelihood or iteration produced non-finite values."""


class EmptySupport(HDPTransportError, ValueError):
    """A support specification materializes to no points."""


class SupportMismatch(HDPTransportError, ValueError):
    """Two measures that must share atoms do not."""


class DegenerateDirichlet(HDPTransportError, ValueError):
    """A Dirichlet parameter vector has a zero component."""


class InsufficientSignal(HDPTransportError, ValueError):
    """Too few usable grid points for a regression."""


class SupportsOverlap(HDPTransportError, ValueError):
    """Supports that must be disjoint share a location."""


class UnknownExperiment(HDPTransportError, KeyError):
    """The requested experiment name is not registered."""
