"""fiberpath: a path-integral Monte Carlo laboratory for the fiber
Hamiltonians of a particle coupled to a transverse vector field at fixed
total momentum, cross-validated by an exactly diagonalizable truncated
occupation-basis model.

The package has three layers:

* model ingredients -- transverse polarization geometry (:mod:`.polarization`),
  dispersion/form factors/mode sets and the transverse pair kernel
  (:mod:`.field_model`), Brownian path sampling (:mod:`.paths`);
* the discretized stochastic action and its couplings (:mod:`.action`) and the
  Monte Carlo estimators built from them (:mod:`.estimators`);
* the truncated Fock-space oracle (:mod:`.fock_oracle`) and a command line
  front end (:mod:`.cli`).
"""

from .field_model import (
    FormFactor,
    IsotropicKernel,
    KernelTable,
    ModeSet,
    ModeSumKernel,
    TestFunction,
    eval_kernel,
    field_covariance,
    ito_isometry_mean,
)
from .paths import BrownianPath, PathGrid, sample_path
from .action import ActionConfig, cross_double_integral, full_action, pair_double_integral, weyl_coupling
from .estimators import (
    Ensemble,
    EstimateResult,
    GreenInsertion,
    GreenSegment,
    StatisticalFailure,
    diamagnetic_check,
    expectation_exp_number,
    expectation_weyl,
    green_n_point,
    ground_energy,
    isometry_check,
    partition,
    partition_ladder,
    quadratic_variation_bound_check,
)
from .fock_oracle import FockBasis, FockModel, positivity_check

__version__ = "0.1.0"

__all__ = [
    "ActionConfig",
    "BrownianPath",
    "Ensemble",
    "EstimateResult",
    "FockBasis",
    "FockModel",
    "FormFactor",
    "GreenInsertion",
    "GreenSegment",
    "IsotropicKernel",
    "KernelTable",
    "ModeSet",
    "ModeSumKernel",
    "PathGrid",
    "StatisticalFailure",
    "TestFunction",
    "cross_double_integral",
    "diamagnetic_check",
    "eval_kernel",
    "expectation_exp_number",
    "expectation_weyl",
    "field_covariance",
    "full_action",
    "green_n_point",
    "ground_energy",
    "isometry_check",
    "ito_isometry_mean",
    "pair_double_integral",
    "partition",
    "partition_ladder",
    "positivity_check",
    "quadratic_variation_bound_check",
    "sample_path",
    "weyl_coupling",
    "__version__",
]
