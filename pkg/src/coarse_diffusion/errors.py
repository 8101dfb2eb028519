"""Exception hierarchy. Everything raised on purpose derives from CoarseDiffusionError."""


class CoarseDiffusionError(Exception):
    pass


class OutsideTube(CoarseDiffusionError, ValueError):
    """Point lies on (or numerically at) the medial set; nearest point is not unique."""


class SingularInput(CoarseDiffusionError, ValueError):
    """Rank-deficient matrix handed to an SO(d) projection."""


class NotOnManifold(CoarseDiffusionError, ValueError):
    pass


class BallTooLarge(CoarseDiffusionError, ValueError):
    pass


class ResolutionTooCoarse(CoarseDiffusionError, ValueError):
    pass


class NonFiniteActivation(CoarseDiffusionError, FloatingPointError):
    pass


class NonFiniteState(CoarseDiffusionError, FloatingPointError):
    pass


class EmptyNeighborhood(CoarseDiffusionError, ValueError):
    pass


class DegenerateVector(CoarseDiffusionError, ValueError):
    pass


class OutsideDomain(CoarseDiffusionError, ValueError):
    pass


class TooFewNeighbors(CoarseDiffusionError, ValueError):
    pass


class NoConvergence(CoarseDiffusionError, RuntimeError):
    pass


class OutOfRange(CoarseDiffusionError, ValueError):
    pass


class EmptyCloud(CoarseDiffusionError, ValueError):
    pass


class TrainTooSmall(CoarseDiffusionError, ValueError):
    pass


class EmptyTrace(CoarseDiffusionError, ValueError):
    pass


class ConfigError(CoarseDiffusionError, ValueError):
    pass
