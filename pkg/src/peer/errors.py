"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; anything else surfaces as the underlying numpy/ValueError.
"""


class PeerError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(PeerError):
    """Matrix shapes violate the n <= m <= p <= m+n window or disagree."""


class RankDeficient(PeerError):
    """A rank precondition failed.

    Parameters
    ----------
    which : str
        One of "X", "L", "stacked" naming the offending matrix.
    rank : int
        The numerical rank that was found.
    needed : int
        The rank that was required.
    """

    def __init__(self, which, rank, needed):
        self.which = which
        self.rank = rank
        self.needed = needed
        super().__init__(f"rank({which}) = {rank}, needs {needed}")


class DivisionByZero(PeerError):
    """A filter weight multiplies a 1/sigma_k term with sigma_k ~ 0."""


class SingularSystem(PeerError):
    """The direct normal-equations system could not be factorized."""


class WrongPath(PeerError):
    """An operation needs a fit produced by a different computation path."""


class WrongPrior(PeerError):
    """A subspace prior is not of the kind the operation requires."""


class InvalidOrder(PeerError):
    """Unsupported derivative order."""


class EmptyPrior(PeerError):
    """A subspace prior with zero dimensions."""


class ZeroBasis(PeerError):
    """All candidate basis columns were numerically zero."""


class NonOrthogonalDecomposition(PeerError):
    """Projectors in a multi-space penalty are not mutually orthogonal."""


class TooManyComponents(PeerError):
    """More principal components requested than the design's rank."""


class PerturbationTooLarge(PeerError):
    """||Z^+|| ||E|| >= 1, the perturbation bound does not apply."""


class FlatLikelihood(PeerError):
    """Restricted likelihood is optimized at the search boundary."""


class EmptyGrid(PeerError):
    """Grid search over an empty parameter grid."""


class ConstantResponse(PeerError):
    """Noise calibration against a constant response vector."""


class ParseError(PeerError):
    """A CSV cell failed to parse.

    Carries 1-based line and column of the offending cell.
    """

    def __init__(self, path, line, column, message):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}:{column}: {message}")


class ShapeMismatch(PeerError):
    """Loaded data files disagree on dimensions."""


class ConfigError(PeerError):
    """An experiment config failed schema validation."""
