"""Extreme dependence between two random vectors via entropic optimal transport."""

from importlib import resources
from pathlib import Path

from .affinity import (
    FitResult,
    TrajectoryPoint,
    default_temperatures,
    dependence_index,
    fit_affinity,
    target_cov,
    trajectory,
)
from .covset import CovSection, Membership, contains, scatter, section, support
from .errors import (
    ConvergenceError,
    ExtremeDepError,
    InfeasibleGuessError,
    InputError,
    ParseError,
    ShapeError,
    SingularCovarianceError,
    UndefinedIndexError,
)
from .finance import (
    PortfolioSpec,
    RainbowSpec,
    SaliencyResult,
    StressReport,
    flat_rho_bound,
    markowitz,
    price_rainbow,
    saliency,
    stress_portfolio,
)
from .marginals import (
    DiscreteMarginal,
    OptionMarginalSpec,
    center,
    load_returns,
    synthesize_lognormal,
)
from .maximality import ConicBasis, is_extreme, linear_minimize_over_basis, maximality_gap
from .transport import (
    Coupling,
    cross_cov,
    entropy,
    eval_W,
    ipfp_solve,
    ot_exact,
    product_coupling,
)

__version__ = "0.1.0"

__all__ = [
    "ConicBasis",
    "ConvergenceError",
    "Coupling",
    "CovSection",
    "DiscreteMarginal",
    "ExtremeDepError",
    "FitResult",
    "InfeasibleGuessError",
    "InputError",
    "Membership",
    "OptionMarginalSpec",
    "ParseError",
    "PortfolioSpec",
    "RainbowSpec",
    "SaliencyResult",
    "ShapeError",
    "SingularCovarianceError",
    "StressReport",
    "TrajectoryPoint",
    "UndefinedIndexError",
    "center",
    "contains",
    "cross_cov",
    "default_temperatures",
    "dependence_index",
    "entropy",
    "eval_W",
    "fit_affinity",
    "flat_rho_bound",
    "ipfp_solve",
    "is_extreme",
    "linear_minimize_over_basis",
    "load_returns",
    "markowitz",
    "maximality_gap",
    "ot_exact",
    "price_rainbow",
    "product_coupling",
    "saliency",
    "scatter",
    "section",
    "stress_portfolio",
    "support",
    "synthesize_lognormal",
    "target_cov",
    "trajectory",
    "data_path",
]


def data_path(name: str) -> Path:
    """Path of a bundled data file (``sample_returns.csv``, ``rainbow_default.json``)."""
    return Path(str(resources.files(__package__).joinpath("data", name)))
