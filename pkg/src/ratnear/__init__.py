"""Counting and measure experiments for rational points near Monge manifolds.

The library splits into small layers: exact polynomial and matrix kernels
(poly, lattice), manifold descriptions (manifold), the counting experiments
(counting), quantitative nondivergence boxes (nondivergence), the
generic/special decomposition and lower-bound coverage (genericity), and
Monte-Carlo approximability runs (khintchine).  The harness subpackage adds
the CLI, config parsing and the calibration manifest.
"""

from importlib.metadata import PackageNotFoundError, version

from .errors import (
    BudgetExceededError,
    CapabilityError,
    ConfigError,
    IllConditionedWarning,
    InvalidDimensionError,
    NumericOverflowError,
    PreconditionError,
    RatnearError,
    SingularMatrixError,
)
from .manifold import Ball, ManifoldMap, load_map, paraboloid, polynomial_monge, veronese
from .poly import Poly
from .lattice import (
    MinimaVector,
    SquareMatrix,
    delta1,
    delta_last,
    dual,
    successive_minima,
    u1_matrix,
)
from .counting import (
    CountReport,
    EpsRule,
    InhomShift,
    RationalWitness,
    SweepResult,
    alpha,
    count_N,
    count_N_star,
    count_N_total,
    enumerate_N,
    eta,
    predicted_main,
    scaling_sweep,
)
from .nondivergence import (
    MeasureEstimate,
    MeasureResult,
    SBoxParams,
    bound_S1,
    family_params,
    measure_S,
    measure_S1_1d,
    witness_S,
)
from .genericity import (
    GenericCount,
    GenericityVerdict,
    LowerBoundCell,
    check_inclusion,
    classify,
    classify_G,
    count_generic,
    delta_cover_fraction,
    special_cover,
)
from .khintchine import (
    ApproxFunction,
    ApproxTrace,
    ExponentEstimate,
    KhintchineSummary,
    exponent_estimate,
    is_approximable_count,
    mc_khintchine,
    trace,
)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "ApproxFunction",
    "ApproxTrace",
    "Ball",
    "BudgetExceededError",
    "CapabilityError",
    "ConfigError",
    "CountReport",
    "EpsRule",
    "ExponentEstimate",
    "GenericCount",
    "GenericityVerdict",
    "IllConditionedWarning",
    "InhomShift",
    "InvalidDimensionError",
    "KhintchineSummary",
    "LowerBoundCell",
    "ManifoldMap",
    "MeasureEstimate",
    "MeasureResult",
    "MinimaVector",
    "NumericOverflowError",
    "Poly",
    "PreconditionError",
    "RationalWitness",
    "RatnearError",
    "SBoxParams",
    "SingularMatrixError",
    "SquareMatrix",
    "SweepResult",
    "alpha",
    "bound_S1",
    "check_inclusion",
    "classify",
    "classify_G",
    "count_N",
    "count_N_star",
    "count_N_total",
    "count_generic",
    "delta1",
    "delta_cover_fraction",
    "delta_last",
    "dual",
    "enumerate_N",
    "eta",
    "exponent_estimate",
    "family_params",
    "is_approximable_count",
    "load_map",
    "mc_khintchine",
    "measure_S",
    "measure_S1_1d",
    "paraboloid",
    "polynomial_monge",
    "predicted_main",
    "scaling_sweep",
    "special_cover",
    "successive_minima",
    "trace",
    "u1_matrix",
    "veronese",
    "witness_S",
]
