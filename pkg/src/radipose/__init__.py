"""Two-view relative pose for radially distorted cameras."""
from .errors import *  # noqa: F401,F403
from .geometry import (
    LAMBDA_RANGE,
    CameraModel,
    DivisionModel,
    ImageDims,
    RelativePose,
    TwoViewModel,
    distort,
    model_from_pose,
    normalize,
    normalize_matches,
    tangent_sampson_error,
    tangent_sampson_errors,
    undistort,
)
from .methods import MethodSpec, parse_method, parse_method_list
from .robust import (
    PriorInjection,
    RansacConfig,
    RansacResult,
    SamplingStrategy,
    TruncatedScore,
    lo_refine,
    ransac_estimate,
    score_model,
)
from .solvers import (
    decompose_to_pose,
    eight_point_F,
    focal_bougnoux,
    focal_sturm_shared,
    nine_point_F_lambda,
    seven_point_F,
)

__version__ = "0.1.0"
