"""Asynchronous sequential inertial iteration for common fixed points and sparse linear systems."""

from .control import ControlSequence, DelayModel, almost_cyclic_check
from .errors import (AsiError, ContractViolation, Divergence, InvalidOperator, InvalidParameter, RunAborted,
                     StalenessViolation)
from .iteration import (ASI, EKN, AsiState, StepBreakdown, StepSchedule, XiMonitor, arock_step_bound, asi_step,
                        asi_update, weighted_step_bound, max_step_size, xi_value)
from .linear import (BlockPartition, DropBlockOperator, Hyperplane, KaczmarzSweep, build_blocks, build_operators,
                     drop_apply, drop_componentwise_reference, drop_residual_update, hyperplane_project,
                     kaczmarz_residual, spectral_certificate)
from .operators import FixedPointOperator, RelaxedOperator, nonexpansive_probe, relax, residual
from .problems import RandomSystemSpec, TomographySystem, make_projector, make_random_system
from .phantom import make_phantom
from .runtime import NodePool, RunRecord, StoppingRule, realized_tau, simulate, simulate_async

__version__ = "0.1.0"
