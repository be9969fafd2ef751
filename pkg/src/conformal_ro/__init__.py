"""Conformal uncertainty sets for robust optimization.

Split and full conformal prediction regions built on a Mahalanobis
conformity score, the ellipsoidal uncertainty sets they induce, a
simplex-constrained min-max solver, and a seeded simulation harness.
"""

__version__ = "0.1.0"

from .conformal import (
    FullConformalGrid,
    GridSpec,
    SplitCalibration,
    full_conformal_pi,
    full_conformal_region,
    split_calibrate,
    split_region_contains,
)
from .errors import (
    ConformalROError,
    DegenerateDirection,
    DomainError,
    GridTooLarge,
    InsufficientData,
    MalformedCsv,
    NotConvergedWarning,
    NotPositiveDefinite,
    UnboundedRadius,
)
from .linalg import CovarianceModel, cholesky, fit_covariance, mahalanobis, tri_solve_lower
from .numerics import Rng, chi2_quantile, std_normal_cdf, std_normal_sample, student_t_quantile
from .robust import RobustSolution, project_simplex, solve_nominal, solve_robust, worst_case
from .uncertainty import (
    BoxSet,
    Ellipsoid,
    build_box_set,
    build_conformal_set,
    build_normality_set,
    build_point_set,
    ellipsoid_contains,
)
