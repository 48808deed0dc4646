"""Random dynamical systems of expanding circle maps: equivariant measures,
Birkhoff statistics, inducing and block-based normal approximation."""

__version__ = "0.1.0"

from ._validation import (
    ConfigurationError, ConvergenceError, FeasibilityError, OutOfScopeWarning,
    PreconditionError, StateError,
)
from .birkhoff import (
    CorrelationTable, TrajectoryEnsemble, VarianceEstimator, birkhoff_sum, center_observable,
    coboundary_test, variance_mc, variance_operator, variance_report,
)
from .blocks import (
    RateParams, block_decomposition, clt_test, h_condition_probe, rate_exponent, variance_match,
)
from .config import default_config, doubling_config, parse_config
from .driving import OmegaPath, SymbolParams, periodic_path, sample_path, shift
from .holder import HolderFunction, HolderParams, holder_norm, sup_norm
from .inducing import ECriteria, WindowCriterion, kac_check, return_times
from .measures import EquivariantMeasure, MeasureStack, estimate_triplet
from .observables import TrigObservable
from .operators import OperatorFamily, decay_rate, ly_check, norm_bound_check
