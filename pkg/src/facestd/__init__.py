"""Rigid pose standardization of 3-D head volumes from orthogonal center slices."""

from .errors import (
    ConvergenceError,
    EstimatorError,
    FacestdError,
    FitDegenerateError,
    RangeError,
    SizeError,
    TranslationRangeWarning,
)
from .geometry import (
    RigidTransform,
    compose,
    euler_to_rotation,
    geodesic_angle_deg,
    invert,
    quat_to_rotation,
    random_perturbation,
    rotation_to_quat,
)
from .gradient import loss_and_gradient, loss_pose_gradient
from .metrics import EvalReport, evaluate, psnr, ssim
from .phantom import PhantomSpec, generate_phantom, phantom_asymmetry_check
from .pipeline import (
    GradientDescentEstimator,
    LossWeights,
    OracleEstimator,
    PoseEstimate,
    RefinementState,
    initialize,
    refine_step,
    standardize,
)
from .planes import PlaneSet, fit_orthogonal_planes, planes_to_gt_transform
from .sampler import affine_grid, apply_transform, sample_center_slices, trilinear_sample
from .volume import SliceTriplet, Volume, extract_center_slices, preprocess

__version__ = "0.1.0"
