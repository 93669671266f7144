"""Bayesian inference for anchor-based object detectors.

MC-dropout samples are reduced to per-anchor Gaussian/categorical beliefs,
updated with conjugate priors, and merged across overlapping anchors in
place of non-maximum suppression.
"""

from .aggregate import (
    AnchorBelief,
    AnchorPrediction,
    aggregate_box,
    aggregate_categorical,
    combine_covariance,
    softmax,
)
from .errors import BayesODError, NumericalError, ParseError, ValidationError
from .fusion import (
    Cluster,
    FinalDetection,
    FusionConfig,
    bayesod_inference,
    fuse_dirichlets,
    fuse_gaussians,
    greedy_cluster,
    regularize,
)
from .losses import (
    LdlFactors,
    LossSample,
    diag_nll,
    grad_check,
    ldl_compose,
    ldl_factorize,
    ldl_surrogate,
    mv_nll,
)
from .metrics import (
    EvalReport,
    GroundTruthObject,
    MatchRecord,
    average_precision,
    evaluate,
    match_detections,
    minimum_uncertainty_error,
    pdq_score,
)
from .model import (
    Box,
    BoxGaussian,
    CategoricalDist,
    CategoryTable,
    categorical_entropy,
    gaussian_entropy,
    iou,
)
from .priors import (
    BoxPrior,
    CategoryCountConfig,
    DirichletState,
    dirichlet_mean,
    dirichlet_posterior,
    gaussian_conjugate_update,
    make_noninformative,
)
from .synth import SceneConfig, SyntheticScene, generate_dataset, generate_scene

__version__ = "0.1.0"
