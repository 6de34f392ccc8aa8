"""Exception hierarchy shared by all radipose modules."""


class RadiposeError(Exception):
    """Base class for every error raised by radipose."""


class DegenerateUndistortion(RadiposeError):
    """The division model sends a point to infinity (1 + lambda r^2 == 0)."""


class NoRealRoot(RadiposeError):
    """Forward distortion has no real solution for the given radius."""


class GradientDegenerate(RadiposeError):
    pass


class InvalidModel(RadiposeError):
    pass


class DegenerateSample(RadiposeError):
    """The design matrix of a sample is rank deficient."""


class SingularA0(DegenerateSample):
    pass


class NoRealSolutions(RadiposeError):
    pass


class DegenerateFocal(RadiposeError):
    """Focal extraction from F failed (negative or non-finite squared focal)."""


class NoCheiralityWinner(RadiposeError):
    pass


class DecompositionFailed(RadiposeError):
    pass


class NotEnoughCorrespondences(RadiposeError):
    pass


class NoModelFound(RadiposeError):
    pass


class EmptyInput(RadiposeError, ValueError):
    pass
