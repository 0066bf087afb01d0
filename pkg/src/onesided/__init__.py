"""Weighted estimates for one-sided dyadic martingale transforms on finite grids."""

from .characteristics import (
    WeightFamilySpec,
    a1_minus,
    a1_plus,
    ainf_minus,
    ainf_plus,
    ap_minus,
    ap_plus,
    dual_weight,
    generate_weight,
)
from .dyadic import DyadicGrid, GridFunction, IntervalId, Weight
from .errors import (
    AddressingError,
    ConfigError,
    ConvergenceError,
    DomainError,
    PreconditionError,
    ResourceLimitError,
)
from .norms import (
    lp_norm,
    maximal_weak_testing,
    ntv_testing,
    op_norm_l2,
    weak_l1_adjoint_probe,
    weak_lp_norm,
)
from .operators import (
    SignPattern,
    TruncationProfile,
    adjoint_transform,
    linearized_adjoint_restricted,
    linearized_transform,
    maximal_truncation,
    operator_matrix,
    transform,
)

__version__ = "0.1.0"
