"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses (2 config, 3 numeric, 4 I/O).
"""


class RiskGraphError(Exception):
    exit_code = 3


# -- graph construction ------------------------------------------------------

class DpagError(RiskGraphError):
    exit_code = 2


class EmptyGraph(DpagError):
    pass


class CycleDetected(DpagError):
    pass


class DuplicatePosition(DpagError):
    pass


class DuplicateEdge(DpagError):
    pass


class InvalidPosition(DpagError):
    pass


class MultipleRoots(DpagError):
    pass


class DegreeExceeded(DpagError):
    pass


class UnknownNode(DpagError):
    pass


class NoSuchEdge(DpagError):
    pass


# -- encoding ----------------------------------------------------------------

class EmptyScene(RiskGraphError):
    exit_code = 2


class TooManyObjects(RiskGraphError):
    exit_code = 2


# -- numerics ----------------------------------------------------------------

class DimensionMismatch(RiskGraphError):
    pass


class EmptyDataset(RiskGraphError):
    pass


class CurvatureViolation(RiskGraphError):
    """Raised by the BFGS update when the curvature condition fails.

    Callers treat it as "skip this update", not as a fatal error.
    """


class NotDescentDirection(RiskGraphError):
    pass


class DivergenceDetected(RiskGraphError):
    pass


class DegenerateCurve(UserWarning):
    """Warning: every control point of a curve coincides."""


# -- configuration / persistence --------------------------------------------

class ConfigInvalid(RiskGraphError):
    exit_code = 2


class EmptySet(RiskGraphError):
    exit_code = 2


class FormatError(RiskGraphError):
    exit_code = 4
