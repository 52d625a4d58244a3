"""Multilevel distribution-grid dynamics, stability certificates and LQR control."""

from .errors import *  # noqa: F401,F403
from .network import (LineParams, MultilevelConfig, NetworkGraph, NodeParams,
                      aggregate_demand_bottom_up, build_multilevel, validate_static)
from .steady_state import (SynchronousState, from_deviation, solve_synchronous_state,
                           steady_residual, to_deviation)
from .stability import (build_hessian_blocks, check_certificate, estimate_lipschitz,
                        lyapunov_derivative, lyapunov_value, region_constants)
from .dynamics import (build_isolated_matrices, build_linearized, integrate, rhs_combined,
                       rhs_isolated, simulate)
from .control import (LQRWeights, centralized_gain, decay_margin, distributed_gains,
                      evaluate_cost, performance_bound, solve_care, synthesize)
from .scenario import run_batch, run_scenario

__version__ = "0.1.0"
