"""Entropy-SGD: optimization by local entropy, with ground-truth oracles and spectrum tools."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ArgumentError,
    CalibrationError,
    ConfigError,
    ConsistencyError,
    DivergenceError,
    EntropySgdError,
    FormatError,
    GridCoverageError,
    NumericError,
    ResourceError,
)
from .objective import Dataset, Landscape1D, MiniBatch, QuadraticObjective, sample_minibatch  # noqa: F401
from .net import MlpObjective, MlpSpec, exact_hessian, fisher_diagonal, init_params  # noqa: F401
from .sampler import SgldConfig, estimate_mu, sgld_optimize  # noqa: F401
from .optimize import (  # noqa: F401
    AdamConfig,
    EntropySgdConfig,
    OptimizerState,
    ScopingSchedule,
    SgdConfig,
    SgldBaselineConfig,
    entropy_sgd_step,
    heuristic_gamma_calibration,
)
from .oracle import GibbsSpec, local_entropy_quadrature, local_entropy_quadratic_closed_form, smoothing_family  # noqa: F401
from .analysis import SpectrumReport, empirical_smoothness, gradient_angle, spectrum_report  # noqa: F401
