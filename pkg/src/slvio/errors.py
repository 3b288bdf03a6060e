"""Exception types raised across the package."""


class SlvioError(Exception):
    pass


class EmptyStreamError(SlvioError, ValueError):
    pass


class OrderingError(SlvioError, ValueError):
    pass


class ParseError(SlvioError, ValueError):
    pass


class DuplicateObservationError(SlvioError, ValueError):
    pass


class ConfigError(SlvioError, ValueError):
    pass


class DegenerateBaseline(SlvioError):
    """Camera centers (almost) coincide; the epipolar plane is undefined."""


class CheiralityError(SlvioError):
    """Predicted point is behind the observing camera."""


class UnderdeterminedError(SlvioError, ValueError):
    pass


class SolverDivergedError(SlvioError, RuntimeError):
    pass


class DataGapError(SlvioError, ValueError):
    pass


class AssociationError(SlvioError, ValueError):
    pass
